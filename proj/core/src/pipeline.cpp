#include "hubert_ap/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "hubert_ap/acoustic_piece.hpp"
#include "hubert_ap/arpa.hpp"
#include "hubert_ap/beam_search.hpp"
#include "hubert_ap/ctc.hpp"
#include "hubert_ap/evaluation.hpp"
#include "hubert_ap/io.hpp"
#include "hubert_ap/kmeans.hpp"
#include "hubert_ap/probe.hpp"
#include "hubert_ap/probe_train.hpp"
#include "hubert_ap/synth.hpp"
#include "json.hpp"

namespace hubert_ap {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

template <typename F>
auto run_stage(const char* name, std::ostream* log, F&& body) {
  if (log) *log << "[pipeline] " << name << std::endl;
  try {
    return body();
  } catch (const std::exception& e) {
    throw Error(std::string("stage ") + name + ": " + e.what());
  }
}

Json metrics_json(const BoundaryMetrics& m) {
  return Json{{"precision", m.precision},
              {"recall", m.recall},
              {"f1", m.f1},
              {"matched", m.counts.matched},
              {"predicted", m.counts.predicted},
              {"golden", m.counts.golden}};
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

ErrorCounts sequence_errors(const std::vector<int>& hyp, const std::vector<int>& ref) {
  return ErrorCounts{edit_distance(hyp, ref), static_cast<long long>(ref.size())};
}

std::vector<LabeledFeatures> labeled(const std::vector<FeatureMatrix>& feats, const std::vector<IdSequence>& labels) {
  std::vector<LabeledFeatures> out;
  out.reserve(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) out.push_back({&feats[i], &labels[i].ids});
  return out;
}

struct PretrainOutcome {
  PretrainResult result;
  int label_vocab = 0;
};

PretrainOutcome pretrain_on(const PipelineConfig& config, const std::vector<FeatureMatrix>& feats,
                            const Matrix& pooled, const std::vector<IdSequence>& labels, int label_vocab) {
  ProbeConfig pc = config.probe;
  pc.input_dim = static_cast<int>(pooled.cols());
  pc.label_vocab = label_vocab;
  pc.ctc_vocab = 0;
  ProbeParams init = build_probe(pc, derive_seed(config.seed, "probe-init"));
  fit_input_normalization(init, pooled);
  TrainConfig tc = config.pretrain;
  tc.seed = derive_seed(config.seed, "pretrain");
  return {pretrain(std::move(init), labeled(feats, labels), tc), label_vocab};
}

Json pretrain_json(const PretrainOutcome& o, const std::string& trace_file) {
  const double ratio = o.result.initial_eval_loss > 0 ? o.result.final_eval_loss / o.result.initial_eval_loss : 0.0;
  return Json{{"label_vocab", o.label_vocab},
              {"steps", static_cast<int>(o.result.trace.size())},
              {"initial_eval_loss", o.result.initial_eval_loss},
              {"final_eval_loss", o.result.final_eval_loss},
              {"loss_ratio", ratio},
              {"trace", trace_file}};
}

}  // namespace

FeatureMatrix features_as_stored(const AudioBuffer& audio, const MfccConfig& config, const std::string& utt_id) {
  FeatureMatrix f = compute_mfcc(audio, config, utt_id);
  f.frames = f.frames.cast<float>().cast<double>();
  return f;
}

ErrorCounts word_errors(const std::string& hypothesis, const std::string& reference) {
  std::map<std::string, int> ids;
  auto to_ids = [&](const std::string& s) {
    std::vector<int> out;
    for (const auto& w : split_words(s)) out.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
    return out;
  };
  const auto h = to_ids(hypothesis);
  const auto r = to_ids(reference);
  return sequence_errors(h, r);
}

ErrorCounts char_errors(const std::string& hypothesis, const std::string& reference) {
  return sequence_errors(std::vector<int>(hypothesis.begin(), hypothesis.end()),
                         std::vector<int>(reference.begin(), reference.end()));
}

PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log) {
  run_stage("config", log, [&] {
    config.validate();
    return 0;
  });
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  write_text_file(out / "config.ini", pipeline_config_to_ini(config));

  Json report;
  report["seed"] = config.seed;
  std::ostringstream text;
  text << "hubert_ap pipeline report\n"
       << "seed " << config.seed << "\n\n";

  // Corpus.
  const SynthCorpus corpus = run_stage("synth", log, [&] {
    SynthCorpus c = synth_corpus(config.synth, derive_seed(config.seed, "synth"));
    write_synth_corpus(out / "corpus", c);
    return c;
  });
  const std::size_t n_utts = corpus.utterances.size();
  std::vector<AlignmentTier> tiers;
  for (const auto& u : corpus.utterances) tiers.push_back(u.alignment);

  // Features.
  const std::vector<FeatureMatrix> feats = run_stage("features", log, [&] {
    std::vector<FeatureMatrix> fm;
    fs::create_directories(out / "features");
    for (const auto& u : corpus.utterances) {
      fm.push_back(features_as_stored(u.audio, config.mfcc, u.utt_id));
      save_features(out / "features" / (u.utt_id + ".feat"), fm.back());
    }
    return fm;
  });
  const Matrix pooled = pool_frames(feats);
  report["corpus"] = Json{{"utterances", n_utts},
                          {"frames", pooled.rows()},
                          {"feature_dim", pooled.cols()},
                          {"phones", corpus.phones.size()},
                          {"lexicon", corpus.lexicon.size()}};
  text << "corpus: " << n_utts << " utterances, " << pooled.rows() << " frames, " << corpus.phones.size()
       << " phones\n";

  // Quantizer.
  const auto [codebook_result, codes] = run_stage("kmeans", log, [&] {
    KMeansConfig kc = config.kmeans;
    kc.seed = derive_seed(config.seed, "kmeans");
    KMeansResult r = kmeans_fit(pooled, kc);
    save_codebook(out / "codebook.bin", r.codebook);
    std::vector<CodeSequence> cs;
    for (const auto& f : feats) cs.push_back(assign(r.codebook, f));
    write_id_sequences(out / "codes.txt", cs);
    return std::pair{r, cs};
  });
  report["kmeans"] = Json{{"k", config.kmeans.k},
                          {"iterations", codebook_result.iterations},
                          {"inertia", codebook_result.codebook.train_inertia}};
  text << "kmeans: k=" << config.kmeans.k << " iterations=" << codebook_result.iterations
       << " inertia=" << fmt(codebook_result.codebook.train_inertia, 2) << "\n";

  // Acoustic pieces.
  const auto [vocab, pieces] = run_stage("acoustic_piece", log, [&] {
    PieceVocab v = train_bpe(codes, config.ap);
    save_vocab(out / "vocab.json", v);
    std::vector<FrameLabelSequence> labels;
    for (const auto& c : codes) labels.push_back(piece_labels(v, c));
    write_id_sequences(out / "pieces.txt", labels);
    return std::pair{v, labels};
  });
  long long spans = 0;
  for (const auto& c : codes) spans += static_cast<long long>(encode(vocab, c).spans.size());
  const double mean_span = spans ? static_cast<double>(pooled.rows()) / static_cast<double>(spans) : 0.0;
  report["acoustic_pieces"] = Json{{"vocab_size", vocab.size()},
                                   {"merges", vocab.merges().size()},
                                   {"spans", spans},
                                   {"mean_span_frames", mean_span}};
  text << "acoustic pieces: vocab=" << vocab.size() << " merges=" << vocab.merges().size()
       << " mean span=" << fmt(mean_span, 2) << " frames\n\n";

  // Evaluation.
  const int tol = config.eval_tolerance;
  const auto [code_metrics, piece_metrics] = run_stage("evaluation", log, [&] {
    return std::pair{corpus_boundary_prf(codes, tiers, tol), corpus_boundary_prf(pieces, tiers, tol)};
  });
  const SharingReport sharing = run_stage("sharing", log, [&] {
    SharingReport r = sharing_percentage(codes, tiers);
    write_text_file(out / "sharing.txt", sharing_to_table(r));
    write_text_file(out / "sharing.json", sharing_to_json(r) + "\n");
    return r;
  });
  report["boundaries"] = Json{{"tolerance_frames", tol},
                              {"codes", metrics_json(code_metrics)},
                              {"pieces", metrics_json(piece_metrics)}};
  report["sharing"] = Json{{"mean_percentage", optional_json(sharing.mean_percentage)}};
  text << "boundary metrics (tolerance " << tol << " frames)\n"
       << "  labels    precision  recall  f1\n"
       << "  codes     " << fmt(code_metrics.precision) << "     " << fmt(code_metrics.recall) << "  "
       << fmt(code_metrics.f1) << "\n"
       << "  pieces    " << fmt(piece_metrics.precision) << "     " << fmt(piece_metrics.recall) << "  "
       << fmt(piece_metrics.f1) << "\n"
       << "code sharing: mean "
       << (sharing.mean_percentage ? fmt(*sharing.mean_percentage) : std::string("undefined")) << "\n\n";

  // Pre-training on both label types.
  std::optional<PretrainOutcome> pre_codes, pre_pieces;
  if (config.run_pretrain) {
    pre_codes = run_stage("pretrain-codes", log, [&] {
      PretrainOutcome o = pretrain_on(config, feats, pooled, codes, config.kmeans.k);
      save_probe(out / "probe_codes.bin", o.result.params);
      write_text_file(out / "trace_codes.csv", trace_to_csv(o.result.trace));
      return o;
    });
    pre_pieces = run_stage("pretrain-pieces", log, [&] {
      PretrainOutcome o = pretrain_on(config, feats, pooled, pieces, vocab.size());
      save_probe(out / "probe_pieces.bin", o.result.params);
      write_text_file(out / "trace_pieces.csv", trace_to_csv(o.result.trace));
      return o;
    });
    report["pretrain"] = Json{{"codes", pretrain_json(*pre_codes, "trace_codes.csv")},
                              {"pieces", pretrain_json(*pre_pieces, "trace_pieces.csv")}};
    text << "masked-prediction pre-training (" << config.pretrain.steps << " steps)\n"
         << "  labels    vocab  initial CE  final CE  ratio\n";
    for (const auto& [name, o] : {std::pair{"codes ", &*pre_codes}, std::pair{"pieces", &*pre_pieces}}) {
      text << "  " << name << "    " << o->label_vocab << "    " << fmt(o->result.initial_eval_loss) << "     "
           << fmt(o->result.final_eval_loss) << "    "
           << fmt(o->result.final_eval_loss / o->result.initial_eval_loss) << "\n";
    }
    text << "\n";
  }

  // CTC fine-tuning on the first utterances.
  const CharVocab chars = CharVocab::synthetic(config.synth.num_phones);
  const std::size_t n_train = std::min<std::size_t>(static_cast<std::size_t>(config.finetune_utterances), n_utts);
  std::vector<TranscribedFeatures> train_set, heldout_set;
  for (std::size_t i = 0; i < n_utts; ++i) {
    (i < n_train ? train_set : heldout_set).push_back({&feats[i], chars.encode(corpus.utterances[i].transcript)});
  }
  std::optional<ProbeParams> tuned;
  if (config.run_finetune) {
    tuned = run_stage("finetune", log, [&] {
      ProbeParams init;
      if (pre_pieces) {
        init = pre_pieces->result.params;
      } else {
        ProbeConfig pc = config.probe;
        pc.input_dim = static_cast<int>(pooled.cols());
        pc.label_vocab = vocab.size();
        init = build_probe(pc, derive_seed(config.seed, "probe-init"));
        fit_input_normalization(init, pooled);
      }
      TrainConfig tc = config.finetune;
      tc.seed = derive_seed(config.seed, "finetune");
      FinetuneResult r = finetune_ctc(std::move(init), train_set, chars.size(), tc);
      save_probe(out / "probe_ctc.bin", r.params);
      write_text_file(out / "trace_ctc.csv", trace_to_csv(r.trace));
      return r.params;
    });
    const double train_err = greedy_token_error(*tuned, train_set);
    const double heldout_err = heldout_set.empty() ? 0.0 : greedy_token_error(*tuned, heldout_set);
    report["finetune"] = Json{{"utterances", n_train},
                              {"from", pre_pieces ? "pieces" : "scratch"},
                              {"train_token_error", train_err},
                              {"heldout_token_error", heldout_err},
                              {"trace", "trace_ctc.csv"}};
    text << "ctc fine-tuning on " << n_train << " utterances (" << config.finetune.steps << " steps)\n"
         << "  greedy token error: train " << fmt(train_err) << ", held-out " << fmt(heldout_err) << "\n\n";
  }

  // Decoding with a bigram LM estimated from the fine-tuning transcripts.
  if (config.run_decode && tuned) {
    run_stage("decode", log, [&] {
      std::vector<std::string> lm_text;
      for (std::size_t i = 0; i < n_train; ++i) lm_text.push_back(corpus.utterances[i].transcript);
      const std::string arpa = estimate_bigram_arpa(lm_text);
      write_text_file(out / "lm.arpa", arpa);
      const NGramLM lm = arpa_load(arpa);

      BeamSearchOptions opts;
      opts.beam_width = config.beam_width;
      opts.weights = *fusion_preset(config.decode_preset);
      opts.length_unit = config.length_unit;

      const std::size_t first = heldout_set.empty() ? 0 : n_train;
      ErrorCounts g_wer, g_cer, b_wer, b_cer;
      std::ostringstream greedy_tsv, beam_tsv;
      for (std::size_t i = first; i < n_utts; ++i) {
        const auto& utt = corpus.utterances[i];
        const Matrix logp = ctc_log_probs(*tuned, feats[i].frames);
        const std::vector<int> g_ids = greedy_decode(logp);
        const std::string g_text = chars.decode(g_ids);
        const FusedScore g_score = fused_score(-ctc_loss(logp, g_ids), g_text, &lm, opts);
        const DecodeResult b = beam_search_fused(logp, &lm, chars, opts);
        greedy_tsv << utt.utt_id << '\t' << g_text << '\t' << fmt(g_score.fused, 6) << '\n';
        beam_tsv << utt.utt_id << '\t' << b.text << '\t' << fmt(b.score.fused, 6) << '\n';
        auto add = [](ErrorCounts& acc, const ErrorCounts& e) {
          acc.edits += e.edits;
          acc.reference += e.reference;
        };
        add(g_wer, word_errors(g_text, utt.transcript));
        add(g_cer, char_errors(g_text, utt.transcript));
        add(b_wer, word_errors(b.text, utt.transcript));
        add(b_cer, char_errors(b.text, utt.transcript));
      }
      write_text_file(out / "decode_greedy.tsv", greedy_tsv.str());
      write_text_file(out / "decode_beam.tsv", beam_tsv.str());
      report["decode"] = Json{{"utterances", n_utts - first},
                              {"preset", config.decode_preset},
                              {"lm_weight", opts.weights.lm_weight},
                              {"word_score", opts.weights.word_score},
                              {"beam_width", opts.beam_width},
                              {"greedy", Json{{"wer", g_wer.rate()}, {"cer", g_cer.rate()}}},
                              {"beam", Json{{"wer", b_wer.rate()}, {"cer", b_cer.rate()}}}};
      text << "decoding " << n_utts - first << " utterances (preset " << config.decode_preset << ", beam "
           << opts.beam_width << ")\n"
           << "  greedy  WER " << fmt(g_wer.rate()) << "  CER " << fmt(g_cer.rate()) << "\n"
           << "  beam    WER " << fmt(b_wer.rate()) << "  CER " << fmt(b_cer.rate()) << "\n\n";
      return 0;
    });
  }

  // Second clustering iteration on probe hidden states.
  if (config.run_iteration2 && pre_pieces) {
    run_stage("iteration2", log, [&] {
      std::vector<FeatureMatrix> hidden;
      for (const auto& f : feats) {
        hidden.push_back({f.utt_id, hidden_states(pre_pieces->result.params, f, config.iteration2_layer)});
      }
      KMeansConfig kc = config.kmeans;
      kc.k = config.iteration2_k;
      kc.max_iters = config.iteration2_max_iters;
      kc.seed = derive_seed(config.seed, "kmeans-iteration2");
      const KMeansResult r = kmeans_fit(pool_frames(hidden), kc);
      save_codebook(out / "codebook_iter2.bin", r.codebook);
      std::vector<CodeSequence> codes2;
      for (const auto& h : hidden) codes2.push_back(assign(r.codebook, h));
      write_id_sequences(out / "codes_iter2.txt", codes2);
      const BoundaryMetrics m = corpus_boundary_prf(codes2, tiers, tol);
      report["iteration2"] = Json{{"layer", config.iteration2_layer},
                                  {"k", kc.k},
                                  {"iterations", r.iterations},
                                  {"inertia", r.codebook.train_inertia},
                                  {"boundaries", metrics_json(m)}};
      text << "iteration 2: layer " << config.iteration2_layer << " hidden states, k=" << kc.k << "\n"
           << "  code boundaries P " << fmt(m.precision) << "  R " << fmt(m.recall) << "  F1 " << fmt(m.f1)
           << "\n";
      return 0;
    });
  }

  PipelineResult result{report.dump(2) + "\n", text.str()};
  write_text_file(out / "report.json", result.report_json);
  write_text_file(out / "report.txt", result.report_text);
  return result;
}

}  // namespace hubert_ap
