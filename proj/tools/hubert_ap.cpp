// hubert_ap: command-line front end for every pipeline stage.
//
// Exit codes: 0 ok, 1 usage error, 2 runtime error. Each command prints a
// one-object JSON summary on stdout; diagnostics go to stderr.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hubert_ap/acoustic_piece.hpp"
#include "hubert_ap/arpa.hpp"
#include "hubert_ap/beam_search.hpp"
#include "hubert_ap/config.hpp"
#include "hubert_ap/ctc.hpp"
#include "hubert_ap/evaluation.hpp"
#include "hubert_ap/io.hpp"
#include "hubert_ap/kmeans.hpp"
#include "hubert_ap/manifest.hpp"
#include "hubert_ap/pipeline.hpp"
#include "hubert_ap/probe.hpp"
#include "hubert_ap/probe_train.hpp"
#include "hubert_ap/synth.hpp"
#include "hubert_ap/wav.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace hubert_ap;

namespace {

struct Globals {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

// Config problems are usage errors (exit 1), not runtime failures.
PipelineConfig effective_config(const Globals& g) {
  try {
    PipelineConfig c = g.config_path.empty() ? parse_pipeline_config("") : load_pipeline_config(g.config_path);
    // The piece alphabet follows kmeans.k unless it is set explicitly.
    const bool tied = c.ap.base_alphabet == c.kmeans.k;
    bool base_given = false;
    for (const auto& o : g.overrides) {
      apply_config_override(c, o);
      std::string key = o.substr(0, o.find('='));
      std::erase_if(key, [](char ch) { return ch == ' ' || ch == '\t'; });
      base_given |= key == "ap.base_alphabet";
    }
    if (tied && !base_given) c.ap.base_alphabet = c.kmeans.k;
    if (g.seed) c.seed = *g.seed;
    if (const char* env = std::getenv("HUBERT_AP_OUT_DIR"); env && *env) c.out_dir = env;
    if (!g.out.empty()) c.out_dir = g.out;
    c.validate();
    return c;
  } catch (const Error& e) {
    throw CLI::ValidationError(std::string(e.what()));
  }
}

fs::path require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw CLI::ValidationError("--out", std::string("required: ") + what);
  return g.out;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Feature directories hold <utt_id>.feat files; utterances come back sorted
// by id.
std::vector<FeatureMatrix> load_feature_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("features: '" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".feat") files.push_back(e.path());
  }
  if (files.empty()) throw Error("features: no .feat files in '" + dir.string() + "'");
  std::sort(files.begin(), files.end());
  std::vector<FeatureMatrix> out;
  for (const auto& f : files) {
    FeatureMatrix m = load_features(f);
    m.utt_id = f.stem().string();
    out.push_back(std::move(m));
  }
  return out;
}

// Label sequences ordered like `feats`; every utterance must be present.
std::vector<IdSequence> align_labels(const std::vector<FeatureMatrix>& feats, const std::vector<IdSequence>& labels) {
  std::map<std::string, const IdSequence*> by_id;
  for (const auto& l : labels) by_id[l.utt_id] = &l;
  std::vector<IdSequence> out;
  for (const auto& f : feats) {
    const auto it = by_id.find(f.utt_id);
    if (it == by_id.end()) throw Error("labels: no entry for utterance '" + f.utt_id + "'");
    if (static_cast<Eigen::Index>(it->second->ids.size()) != f.frames.rows()) {
      throw Error("labels: utterance '" + f.utt_id + "' has " + std::to_string(it->second->ids.size()) +
                  " labels for " + std::to_string(f.frames.rows()) + " frames");
    }
    out.push_back(*it->second);
  }
  return out;
}

std::map<std::string, std::string> manifest_transcripts(const fs::path& manifest) {
  std::map<std::string, std::string> out;
  for (const auto& r : read_manifest(manifest).records) {
    if (r.transcript) out[r.utt_id] = *r.transcript;
  }
  return out;
}

int max_label(const std::vector<IdSequence>& seqs) {
  int m = -1;
  for (const auto& s : seqs) {
    for (int v : s.ids) m = std::max(m, v);
  }
  return m;
}

void emit(const Json& j) { std::cout << j.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hubert_ap: acoustic codes, acoustic pieces and a toy masked-prediction probe"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI config file ([section] key = value)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--seed", g.seed, "Root seed (overrides pipeline.seed)");
  app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)");
  app.fallthrough();

  std::string manifest, features_dir, codes_path, labels_path, alignments_path, predicted_alignments;
  std::string codebook_path, vocab_path, probe_path, init_path, lm_path, trace_path;
  std::optional<int> tolerance, label_vocab, utterances, beam_width;
  std::optional<std::string> preset;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus (wav, alignments, transcripts, manifest)");

  auto* features = app.add_subcommand("features", "Compute MFCC feature files for every manifest entry");
  features->add_option("--manifest", manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);

  auto* km_train = app.add_subcommand("kmeans-train", "Fit a k-means codebook on pooled feature frames");
  km_train->add_option("--features", features_dir, "Directory of .feat files")->required();

  auto* km_apply = app.add_subcommand("kmeans-apply", "Assign every frame its nearest centroid");
  km_apply->add_option("--features", features_dir, "Directory of .feat files")->required();
  km_apply->add_option("--codebook", codebook_path, "Codebook file")->required()->check(CLI::ExistingFile);

  auto* ap_train = app.add_subcommand("ap-train", "Learn an acoustic-piece vocabulary from code sequences");
  ap_train->add_option("--codes", codes_path, "Code sequence text file")->required()->check(CLI::ExistingFile);

  auto* ap_encode = app.add_subcommand("ap-encode", "Segment codes into pieces and remap to frame labels");
  ap_encode->add_option("--codes", codes_path, "Code sequence text file")->required()->check(CLI::ExistingFile);
  ap_encode->add_option("--vocab", vocab_path, "Vocabulary JSON")->required()->check(CLI::ExistingFile);

  auto* eval_b = app.add_subcommand("eval-boundaries", "Boundary precision/recall/F1 against golden alignments");
  auto* labels_opt = eval_b->add_option("--labels", labels_path, "Frame label text file (codes or pieces)");
  auto* pred_opt =
      eval_b->add_option("--predicted-alignments", predicted_alignments, "Alignment TSV used as the prediction");
  labels_opt->excludes(pred_opt);
  eval_b->add_option("--alignments", alignments_path, "Golden alignment TSV")->required()->check(CLI::ExistingFile);
  eval_b->add_option("--tolerance", tolerance, "Matching tolerance in frames (default eval.tolerance_frames)");

  auto* eval_s = app.add_subcommand("eval-sharing", "Per-phone code-sharing percentages");
  eval_s->add_option("--codes", codes_path, "Code sequence text file")->required()->check(CLI::ExistingFile);
  eval_s->add_option("--alignments", alignments_path, "Golden alignment TSV")->required()->check(CLI::ExistingFile);

  auto* pre = app.add_subcommand("pretrain", "Masked-prediction pre-training of the probe");
  pre->add_option("--features", features_dir, "Directory of .feat files")->required();
  pre->add_option("--labels", labels_path, "Frame label text file")->required()->check(CLI::ExistingFile);
  pre->add_option("--label-vocab", label_vocab, "Label vocabulary size (default: max label + 1)");
  pre->add_option("--trace", trace_path, "Loss trace CSV");

  auto* ft = app.add_subcommand("finetune", "CTC fine-tuning on manifest transcripts");
  ft->add_option("--features", features_dir, "Directory of .feat files")->required();
  ft->add_option("--manifest", manifest, "Manifest with transcripts")->required()->check(CLI::ExistingFile);
  ft->add_option("--init", init_path, "Pre-trained probe checkpoint")->check(CLI::ExistingFile);
  ft->add_option("--utterances", utterances, "Use the first N utterances (default finetune.utterances)");
  ft->add_option("--trace", trace_path, "Loss trace CSV");

  auto* dec = app.add_subcommand("decode", "Greedy or LM-fused beam decoding to TSV utt_id, text, fused_score");
  dec->add_option("--features", features_dir, "Directory of .feat files")->required();
  dec->add_option("--probe", probe_path, "Fine-tuned probe checkpoint")->required()->check(CLI::ExistingFile);
  dec->add_option("--lm", lm_path, "ARPA language model (omit for greedy decoding)")->check(CLI::ExistingFile);
  dec->add_option("--preset", preset, "Fusion preset: 1h, 10h or 100h (default decode.preset)");
  dec->add_option("--beam", beam_width, "Beam width (default decode.beam_width)");

  auto* pipe = app.add_subcommand("pipeline", "Run every stage and write report.json / report.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const PipelineConfig cfg = effective_config(g);

    if (*synth) {
      const fs::path out = require_out(g, "corpus directory");
      const SynthCorpus corpus = synth_corpus(cfg.synth, derive_seed(cfg.seed, "synth"));
      write_synth_corpus(out, corpus);
      long long frames = 0;
      for (const auto& u : corpus.utterances) frames += u.alignment.intervals.back().end;
      emit(Json{{"command", "synth"},
                {"out", out.generic_string()},
                {"utterances", corpus.utterances.size()},
                {"frames", frames},
                {"manifest", (out / "manifest.tsv").generic_string()}});
    } else if (*features) {
      const fs::path out = require_out(g, "feature directory");
      fs::create_directories(out);
      long long frames = 0;
      const Manifest m = read_manifest(manifest);
      for (const auto& r : m.records) {
        const FeatureMatrix f = features_as_stored(read_wav(r.wav), cfg.mfcc, r.utt_id);
        save_features(out / (r.utt_id + ".feat"), f);
        frames += f.frames.rows();
      }
      emit(Json{{"command", "features"},
                {"out", out.generic_string()},
                {"utterances", m.records.size()},
                {"frames", frames},
                {"feature_dim", cfg.mfcc.feature_dim()}});
    } else if (*km_train) {
      const fs::path out = require_out(g, "codebook file");
      KMeansConfig kc = cfg.kmeans;
      kc.seed = derive_seed(cfg.seed, "kmeans");
      const KMeansResult r = kmeans_fit(pool_frames(load_feature_dir(features_dir)), kc);
      ensure_parent(out);
      save_codebook(out, r.codebook);
      emit(Json{{"command", "kmeans-train"},
                {"out", out.generic_string()},
                {"k", kc.k},
                {"iterations", r.iterations},
                {"inertia", r.codebook.train_inertia}});
    } else if (*km_apply) {
      const fs::path out = require_out(g, "code text file");
      const Codebook cb = load_codebook(codebook_path);
      std::vector<CodeSequence> codes;
      for (const auto& f : load_feature_dir(features_dir)) codes.push_back(assign(cb, f));
      ensure_parent(out);
      write_id_sequences(out, codes);
      emit(Json{{"command", "kmeans-apply"}, {"out", out.generic_string()}, {"utterances", codes.size()}});
    } else if (*ap_train) {
      const fs::path out = require_out(g, "vocabulary JSON");
      BpeTrace trace;
      const PieceVocab v = train_bpe(read_id_sequences(fs::path(codes_path)), cfg.ap, &trace);
      ensure_parent(out);
      save_vocab(out, v);
      emit(Json{{"command", "ap-train"},
                {"out", out.generic_string()},
                {"base_alphabet", v.base_alphabet()},
                {"size", v.size()},
                {"merges", v.merges().size()}});
    } else if (*ap_encode) {
      const fs::path out = require_out(g, "frame label text file");
      const PieceVocab v = load_vocab(vocab_path);
      std::vector<FrameLabelSequence> labels;
      long long spans = 0, frames = 0;
      for (const auto& c : read_id_sequences(fs::path(codes_path))) {
        const Segmentation seg = encode(v, c);
        spans += static_cast<long long>(seg.spans.size());
        frames += static_cast<long long>(c.ids.size());
        labels.push_back(remap_frames(seg));
      }
      ensure_parent(out);
      write_id_sequences(out, labels);
      emit(Json{{"command", "ap-encode"},
                {"out", out.generic_string()},
                {"utterances", labels.size()},
                {"frames", frames},
                {"spans", spans}});
    } else if (*eval_b) {
      const int tol = tolerance.value_or(cfg.eval_tolerance);
      if (tol < 0) throw CLI::ValidationError("--tolerance", "must be >= 0");
      const auto golden = read_alignments(fs::path(alignments_path));
      BoundaryMetrics m;
      if (!predicted_alignments.empty()) {
        const auto pred = read_alignments(fs::path(predicted_alignments));
        std::map<std::string, const AlignmentTier*> by_id;
        for (const auto& t : pred) by_id[t.utt_id] = &t;
        BoundaryCounts counts;
        for (const auto& t : golden) {
          const auto it = by_id.find(t.utt_id);
          if (it == by_id.end()) throw Error("eval: prediction lacks utterance '" + t.utt_id + "'");
          counts += match_boundaries(it->second->boundaries(), t.boundaries(), tol);
        }
        m = metrics_from_counts(counts, tol);
      } else if (!labels_path.empty()) {
        m = corpus_boundary_prf(read_id_sequences(fs::path(labels_path)), golden, tol);
      } else {
        throw CLI::ValidationError("eval-boundaries", "give --labels or --predicted-alignments");
      }
      const Json j = Json{{"command", "eval-boundaries"},
                          {"tolerance_frames", tol},
                          {"metrics", Json::parse(metrics_to_json(m))}};
      if (!g.out.empty()) write_text_file(g.out, j.dump(2) + "\n");
      emit(j);
    } else if (*eval_s) {
      const SharingReport r =
          sharing_percentage(read_id_sequences(fs::path(codes_path)), read_alignments(fs::path(alignments_path)));
      if (!g.out.empty()) write_text_file(g.out, sharing_to_table(r));
      emit(Json{{"command", "eval-sharing"}, {"report", Json::parse(sharing_to_json(r))}});
    } else if (*pre) {
      const fs::path out = require_out(g, "probe checkpoint");
      const auto feats = load_feature_dir(features_dir);
      const auto labels = align_labels(feats, read_id_sequences(fs::path(labels_path)));
      ProbeConfig pc = cfg.probe;
      pc.input_dim = static_cast<int>(feats.front().frames.cols());
      pc.label_vocab = label_vocab.value_or(max_label(labels) + 1);
      pc.ctc_vocab = 0;
      ProbeParams init = build_probe(pc, derive_seed(cfg.seed, "probe-init"));
      fit_input_normalization(init, pool_frames(feats));
      std::vector<LabeledFeatures> corpus;
      for (std::size_t i = 0; i < feats.size(); ++i) corpus.push_back({&feats[i], &labels[i].ids});
      TrainConfig tc = cfg.pretrain;
      tc.seed = derive_seed(cfg.seed, "pretrain");
      const PretrainResult r = pretrain(std::move(init), corpus, tc);
      ensure_parent(out);
      save_probe(out, r.params);
      if (!trace_path.empty()) write_text_file(trace_path, trace_to_csv(r.trace));
      emit(Json{{"command", "pretrain"},
                {"out", out.generic_string()},
                {"label_vocab", pc.label_vocab},
                {"steps", tc.steps},
                {"initial_eval_loss", r.initial_eval_loss},
                {"final_eval_loss", r.final_eval_loss}});
    } else if (*ft) {
      const fs::path out = require_out(g, "probe checkpoint");
      const auto feats = load_feature_dir(features_dir);
      const auto transcripts = manifest_transcripts(manifest);
      const int limit = utterances.value_or(cfg.finetune_utterances);
      const CharVocab chars = CharVocab::synthetic(cfg.synth.num_phones);
      // Manifest order defines "the first N utterances".
      std::map<std::string, const FeatureMatrix*> by_id;
      for (const auto& f : feats) by_id[f.utt_id] = &f;
      std::vector<TranscribedFeatures> corpus;
      for (const auto& r : read_manifest(manifest).records) {
        if (static_cast<int>(corpus.size()) >= limit) break;
        if (!r.transcript) continue;
        const auto it = by_id.find(r.utt_id);
        if (it == by_id.end()) throw Error("finetune: no features for utterance '" + r.utt_id + "'");
        corpus.push_back({it->second, chars.encode(*r.transcript)});
      }
      if (corpus.empty()) throw Error("finetune: manifest has no transcripts");
      ProbeParams init;
      if (!init_path.empty()) {
        init = load_probe(init_path);
      } else {
        ProbeConfig pc = cfg.probe;
        pc.input_dim = static_cast<int>(feats.front().frames.cols());
        pc.label_vocab = 1;
        init = build_probe(pc, derive_seed(cfg.seed, "probe-init"));
        fit_input_normalization(init, pool_frames(feats));
      }
      TrainConfig tc = cfg.finetune;
      tc.seed = derive_seed(cfg.seed, "finetune");
      const FinetuneResult r = finetune_ctc(std::move(init), corpus, chars.size(), tc);
      ensure_parent(out);
      save_probe(out, r.params);
      if (!trace_path.empty()) write_text_file(trace_path, trace_to_csv(r.trace));
      emit(Json{{"command", "finetune"},
                {"out", out.generic_string()},
                {"utterances", corpus.size()},
                {"steps", tc.steps},
                {"train_token_error", greedy_token_error(r.params, corpus)}});
    } else if (*dec) {
      const fs::path out = require_out(g, "decode TSV");
      const ProbeParams params = load_probe(probe_path);
      if (!params.has_ctc_head()) throw Error("decode: checkpoint '" + probe_path + "' has no CTC head");
      const CharVocab chars = CharVocab::synthetic(params.config.ctc_vocab - 2);
      std::optional<NGramLM> lm;
      if (!lm_path.empty()) lm = arpa_load_file(lm_path);
      BeamSearchOptions opts;
      const std::string preset_name = preset.value_or(cfg.decode_preset);
      const auto w = fusion_preset(preset_name);
      if (!w) throw CLI::ValidationError("--preset", "unknown preset '" + preset_name + "'");
      opts.weights = *w;
      opts.beam_width = beam_width.value_or(cfg.beam_width);
      if (opts.beam_width < 1) throw CLI::ValidationError("--beam", "must be >= 1");
      opts.length_unit = cfg.length_unit;
      std::ostringstream tsv;
      std::size_t n = 0;
      for (const auto& f : load_feature_dir(features_dir)) {
        const Matrix logp = ctc_log_probs(params, f.frames);
        std::string text;
        double score;
        if (lm) {
          const DecodeResult r = beam_search_fused(logp, &*lm, chars, opts);
          text = r.text;
          score = r.score.fused;
        } else {
          const auto ids = greedy_decode(logp);
          text = chars.decode(ids);
          score = fused_score(-ctc_loss(logp, ids), text, nullptr, opts).fused;
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", score);
        tsv << f.utt_id << '\t' << text << '\t' << buf << '\n';
        ++n;
      }
      ensure_parent(out);
      write_text_file(out, tsv.str());
      emit(Json{{"command", "decode"},
                {"out", out.generic_string()},
                {"utterances", n},
                {"mode", lm ? "beam" : "greedy"},
                {"preset", preset_name},
                {"beam_width", opts.beam_width}});
    } else if (*pipe) {
      const PipelineResult r = run_pipeline(cfg, &std::cerr);
      Json j = Json::parse(r.report_json);
      emit(Json{{"command", "pipeline"}, {"out", cfg.out_dir.generic_string()}, {"report", j}});
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
