#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hubert_ap/acoustic_piece.hpp"
#include "hubert_ap/config.hpp"
#include "hubert_ap/evaluation.hpp"
#include "hubert_ap/manifest.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace hubert_ap;
namespace fs = std::filesystem;

TEST_CASE("config defaults are consistent") {
  const PipelineConfig c = parse_pipeline_config("");
  CHECK_NOTHROW(c.validate());
  CHECK(c.kmeans.k == 100);
  CHECK(c.ap.base_alphabet == 100);
  CHECK(c.ap.vocab_size == 1000);
  CHECK(c.probe.mask_span == 10);
  CHECK(c.probe.layerdrop == 0.05);
  CHECK(c.pretrain.peak_lr == 5e-4);
  CHECK(c.pretrain.warmup_fraction == 0.08);
  CHECK(c.eval_tolerance == 1);
  CHECK(c.length_unit == LengthUnit::kWords);
}

TEST_CASE("config parsing and overrides") {
  const PipelineConfig c = parse_pipeline_config(
      "[pipeline]\nseed = 9\nrun_decode = false\n"
      "[kmeans]\nk = 20\n"
      "[ap]\nvocab_size = 60\n"
      "[decode]\npreset = 1h\nlength_unit = chars\n"
      "[finetune]\nutterances = 7\n");
  CHECK(c.seed == 9);
  CHECK_FALSE(c.run_decode);
  CHECK(c.kmeans.k == 20);
  CHECK(c.ap.base_alphabet == 20);
  CHECK(c.ap.vocab_size == 60);
  CHECK(c.decode_preset == "1h");
  CHECK(c.length_unit == LengthUnit::kChars);
  CHECK(c.finetune_utterances == 7);
  CHECK_NOTHROW(c.validate());

  PipelineConfig o = c;
  apply_config_override(o, "probe.model_dim = 32");
  apply_config_override(o, "pretrain.peak_lr=0.001");
  CHECK(o.probe.model_dim == 32);
  CHECK(o.pretrain.peak_lr == 0.001);
  CHECK_THROWS_AS(apply_config_override(o, "probe.nope=1"), Error);
  CHECK_THROWS_AS(apply_config_override(o, "probe.model_dim"), Error);
  CHECK_THROWS_AS(apply_config_override(o, "probe.model_dim=3x"), Error);
  CHECK_THROWS_AS(apply_config_override(o, "pipeline.run_decode=maybe"), Error);
  CHECK_THROWS_AS(parse_pipeline_config("seed = 3\n"), Error);
  CHECK_THROWS_AS(parse_pipeline_config("[kmeans]\nclusters = 3\n"), Error);
}

TEST_CASE("config consistency checks") {
  PipelineConfig c = parse_pipeline_config("[kmeans]\nk = 20\n[ap]\nbase_alphabet = 30\n");
  CHECK_THROWS_AS(c.validate(), Error);
  c = parse_pipeline_config("[decode]\npreset = 3h\n");
  CHECK_THROWS_AS(c.validate(), Error);
  c = parse_pipeline_config("[ap]\nvocab_size = 50\n");
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("config INI round trip") {
  PipelineConfig c = parse_pipeline_config("[kmeans]\nk = 12\n[probe]\nmask_start_prob = 0.1\n");
  c.pretrain.peak_lr = 1.0 / 3.0;
  const std::string ini = pipeline_config_to_ini(c);
  const PipelineConfig back = parse_pipeline_config(ini);
  CHECK(pipeline_config_to_ini(back) == ini);
  CHECK(back.pretrain.peak_lr == 1.0 / 3.0);
  CHECK(back.kmeans.k == 12);

  testutil::TempDir dir("cfg");
  write_text_file(dir / "c.ini", ini);
  CHECK(pipeline_config_to_ini(load_pipeline_config(dir / "c.ini")) == ini);
  write_text_file(dir / "bad.ini", "[kmeans]\nk = zero\n");
  try {
    load_pipeline_config(dir / "bad.ini");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("bad.ini") != std::string::npos);
  }
}

TEST_CASE("manifest read and write") {
  testutil::TempDir dir("manifest");
  write_text_file(dir / "m.tsv",
                  "# comment\n"
                  "a\twav/a.wav\thello world\talign.tsv\n"
                  "b\t/abs/b.wav\n"
                  "c\tc.wav\t\t\n");
  const Manifest m = read_manifest(dir / "m.tsv");
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[0].wav == dir / "wav/a.wav");
  CHECK(*m.records[0].transcript == "hello world");
  CHECK(*m.records[0].alignment == dir / "align.tsv");
  CHECK(m.records[1].wav == "/abs/b.wav");
  CHECK_FALSE(m.records[1].transcript.has_value());
  CHECK_FALSE(m.records[2].alignment.has_value());

  write_manifest(dir / "copy.tsv", m);
  const Manifest back = read_manifest(dir / "copy.tsv");
  REQUIRE(back.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.records[i].utt_id == m.records[i].utt_id);
    CHECK(back.records[i].wav == m.records[i].wav);
    CHECK(back.records[i].transcript == m.records[i].transcript);
  }
  write_text_file(dir / "dup.tsv", "a\tx.wav\na\ty.wav\n");
  CHECK_THROWS_AS(read_manifest(dir / "dup.tsv"), Error);
  write_text_file(dir / "short.tsv", "a\n");
  CHECK_THROWS_AS(read_manifest(dir / "short.tsv"), Error);
  CHECK_THROWS_AS(read_manifest(dir / "missing.tsv"), Error);
}

#ifndef HUBERT_AP_NO_CLI
namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

// Runs the CLI inside `dir`, capturing stdout and stderr.
Run cli(const fs::path& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && HUBERT_AP_OUT_DIR= '" + std::string(HUBERT_AP_CLI) + "' " +
                          args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

nlohmann::json summary(const Run& r) {
  INFO("stderr: " << r.err);
  REQUIRE(r.status == 0);
  return nlohmann::json::parse(r.out);
}

}  // namespace

TEST_CASE("cli end to end on a tiny corpus") {
  testutil::TempDir dir("cli");
  const fs::path d = dir.path();
  const std::string small = "--set synth.num_utterances=6 --set kmeans.k=8 --set ap.vocab_size=20 ";

  auto s = summary(cli(d, small + "--out corpus synth"));
  CHECK(s["command"] == "synth");
  CHECK(s["utterances"] == 6);
  CHECK(fs::exists(d / "corpus/manifest.tsv"));
  CHECK(fs::exists(d / "corpus/wav/utt0000.wav"));

  // Golden against golden.
  s = summary(cli(d, "eval-boundaries --predicted-alignments corpus/align.tsv --alignments corpus/align.tsv"));
  CHECK(s["metrics"]["f1"] == 1.0);

  s = summary(cli(d, small + "--out feats features --manifest corpus/manifest.tsv"));
  CHECK(s["feature_dim"] == 39);
  s = summary(cli(d, small + "--out cb.bin kmeans-train --features feats"));
  CHECK(s["k"] == 8);
  summary(cli(d, small + "--out codes.txt kmeans-apply --features feats --codebook cb.bin"));
  const auto codes = read_id_sequences(d / "codes.txt");
  CHECK(codes.size() == 6);

  // vocab_size == k gives the identity inventory.
  s = summary(cli(d, small + "--set ap.vocab_size=8 --out identity.json ap-train --codes codes.txt"));
  CHECK(s["merges"] == 0);
  summary(cli(d, small + "--out same.txt ap-encode --codes codes.txt --vocab identity.json"));
  CHECK(read_id_sequences(d / "same.txt") == codes);

  s = summary(cli(d, small + "--out vocab.json ap-train --codes codes.txt"));
  CHECK(s["merges"].get<int>() > 0);
  summary(cli(d, small + "--out pieces.txt ap-encode --codes codes.txt --vocab vocab.json"));
  s = summary(cli(d, "eval-boundaries --labels pieces.txt --alignments corpus/align.tsv --tolerance 2"));
  CHECK(s["tolerance_frames"] == 2);
  const auto pieces = read_id_sequences(d / "pieces.txt");
  const auto direct = corpus_boundary_prf(pieces, read_alignments(d / "corpus/align.tsv"), 2);
  CHECK(s["metrics"]["f1"].get<double>() == doctest::Approx(direct.f1).epsilon(1e-12));
  s = summary(cli(d, "eval-sharing --codes codes.txt --alignments corpus/align.tsv"));
  CHECK(s["report"].contains("mean_percentage"));

  const std::string probe = small +
                            "--set probe.model_dim=16 --set probe.ffn_dim=32 --set probe.layers=1 "
                            "--set pretrain.steps=3 --set pretrain.batch_size=2 --set pretrain.eval_utterances=2 "
                            "--set finetune.steps=3 --set finetune.batch_size=2 ";
  s = summary(cli(d, probe + "--out pre.bin pretrain --features feats --labels pieces.txt --label-vocab 20 "
                             "--trace pre.csv"));
  CHECK(read_text_file(d / "pre.csv").rfind("step,lr,loss\n", 0) == 0);
  summary(cli(d, probe + "--out ft.bin finetune --features feats --manifest corpus/manifest.tsv --init pre.bin "
                         "--utterances 4"));
  s = summary(cli(d, probe + "--out greedy.tsv decode --features feats --probe ft.bin"));
  CHECK(s["mode"] == "greedy");
  std::istringstream rows(read_text_file(d / "greedy.tsv"));
  std::string line;
  int n = 0;
  while (std::getline(rows, line)) {
    CHECK(std::count(line.begin(), line.end(), '\t') == 2);
    ++n;
  }
  CHECK(n == 6);
}

TEST_CASE("cli exit codes") {
  testutil::TempDir dir("cli-errors");
  const fs::path d = dir.path();
  // Usage errors.
  CHECK(cli(d, "").status == 1);
  CHECK(cli(d, "no-such-command").status == 1);
  CHECK(cli(d, "ap-train --codes missing.txt --out v.json").status == 1);
  const Run bad_key = cli(d, "--set probe.nope=1 synth --out x");
  CHECK(bad_key.status == 1);
  CHECK(bad_key.err.find("probe.nope") != std::string::npos);
  CHECK(cli(d, "--set kmeans.k=8 --set ap.base_alphabet=9 synth --out x").status == 1);
  // Runtime errors.
  write_text_file(d / "codes.txt", "a\t1 2 x\n");
  const Run bad_codes = cli(d, "--out v.json ap-train --codes codes.txt");
  CHECK(bad_codes.status == 2);
  CHECK(bad_codes.err.rfind("error: ", 0) == 0);
  write_text_file(d / "align.tsv", "a\tp\t0\t3\n");
  write_text_file(d / "labels.txt", "a\t1 2\n");
  CHECK(cli(d, "eval-boundaries --labels labels.txt --alignments align.tsv").status == 2);
}
#endif
