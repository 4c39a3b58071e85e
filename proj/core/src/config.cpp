#include "hubert_ap/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hubert_ap/io.hpp"

namespace hubert_ap {
namespace {

struct Field {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error("config: invalid value '" + value + "' for " + key);
}

template <typename T>
T parse_scalar(const std::string& key, const std::string& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::size_t used = 0;
    T out{};
    try {
      out = static_cast<T>(std::stod(v, &used));
    } catch (const std::exception&) {
      bad_value(key, v);
    }
    if (used != v.size()) bad_value(key, v);
    return out;
  } else {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v);
    return out;
  }
}

template <typename T>
std::string format_scalar(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
    return buf;
  } else {
    return std::to_string(v);
  }
}

template <typename T, typename Access>
Field field(const std::string& key, Access access) {
  return Field{[key, access](PipelineConfig& c, const std::string& v) { access(c) = parse_scalar<T>(key, v); },
               [access](const PipelineConfig& c) { return format_scalar<T>(access(const_cast<PipelineConfig&>(c))); }};
}

#define HAP_FIELD(map, key, member)                                                     \
  map.emplace(key, field<std::decay_t<decltype(PipelineConfig{}.member)>>(               \
                       key, [](PipelineConfig& c) -> auto& { return c.member; }))

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> m;
    HAP_FIELD(m, "pipeline.seed", seed);
    HAP_FIELD(m, "pipeline.run_pretrain", run_pretrain);
    HAP_FIELD(m, "pipeline.run_finetune", run_finetune);
    HAP_FIELD(m, "pipeline.run_decode", run_decode);
    HAP_FIELD(m, "pipeline.run_iteration2", run_iteration2);
    m.emplace("pipeline.out_dir",
              Field{[](PipelineConfig& c, const std::string& v) { c.out_dir = v; },
                    [](const PipelineConfig& c) { return c.out_dir.generic_string(); }});

    HAP_FIELD(m, "synth.num_phones", synth.num_phones);
    HAP_FIELD(m, "synth.min_phone_frames", synth.min_phone_frames);
    HAP_FIELD(m, "synth.max_phone_frames", synth.max_phone_frames);
    HAP_FIELD(m, "synth.min_utt_phones", synth.min_utt_phones);
    HAP_FIELD(m, "synth.max_utt_phones", synth.max_utt_phones);
    HAP_FIELD(m, "synth.num_utterances", synth.num_utterances);
    HAP_FIELD(m, "synth.lexicon_size", synth.lexicon_size);
    HAP_FIELD(m, "synth.max_word_phones", synth.max_word_phones);
    HAP_FIELD(m, "synth.min_sil_frames", synth.min_sil_frames);
    HAP_FIELD(m, "synth.max_sil_frames", synth.max_sil_frames);
    HAP_FIELD(m, "synth.noise_level", synth.noise_level);

    HAP_FIELD(m, "features.window_ms", mfcc.window_ms);
    HAP_FIELD(m, "features.hop_ms", mfcc.hop_ms);
    HAP_FIELD(m, "features.mel_bands", mfcc.mel_bands);
    HAP_FIELD(m, "features.cepstral_coeffs", mfcc.cepstral_coeffs);
    HAP_FIELD(m, "features.include_deltas", mfcc.include_deltas);
    HAP_FIELD(m, "features.log_floor", mfcc.log_floor);

    HAP_FIELD(m, "kmeans.k", kmeans.k);
    HAP_FIELD(m, "kmeans.max_iters", kmeans.max_iters);
    HAP_FIELD(m, "kmeans.rel_tol", kmeans.rel_tol);
    HAP_FIELD(m, "kmeans.max_frames", kmeans.max_frames);

    HAP_FIELD(m, "ap.vocab_size", ap.vocab_size);
    HAP_FIELD(m, "ap.base_alphabet", ap.base_alphabet);
    HAP_FIELD(m, "ap.min_pair_freq", ap.min_pair_freq);

    HAP_FIELD(m, "probe.layers", probe.layers);
    HAP_FIELD(m, "probe.model_dim", probe.model_dim);
    HAP_FIELD(m, "probe.heads", probe.heads);
    HAP_FIELD(m, "probe.ffn_dim", probe.ffn_dim);
    HAP_FIELD(m, "probe.rel_pos_buckets", probe.rel_pos_buckets);
    HAP_FIELD(m, "probe.max_rel_distance", probe.max_rel_distance);
    HAP_FIELD(m, "probe.use_rel_bias", probe.use_rel_bias);
    HAP_FIELD(m, "probe.gated_rel_bias", probe.gated_rel_bias);
    HAP_FIELD(m, "probe.mask_start_prob", probe.mask_start_prob);
    HAP_FIELD(m, "probe.mask_span", probe.mask_span);
    HAP_FIELD(m, "probe.layerdrop", probe.layerdrop);
    HAP_FIELD(m, "probe.finetune_mask_prob", probe.finetune_mask_prob);
    HAP_FIELD(m, "probe.channel_mask_prob", probe.channel_mask_prob);
    HAP_FIELD(m, "probe.channel_mask_span", probe.channel_mask_span);

    for (const char* stage : {"pretrain", "finetune"}) {
      const std::string s = stage;
      auto pick = [s](PipelineConfig& c) -> TrainConfig& { return s == "pretrain" ? c.pretrain : c.finetune; };
      m.emplace(s + ".steps", field<int>(s + ".steps", [pick](PipelineConfig& c) -> auto& { return pick(c).steps; }));
      m.emplace(s + ".batch_size",
                field<int>(s + ".batch_size", [pick](PipelineConfig& c) -> auto& { return pick(c).batch_size; }));
      m.emplace(s + ".peak_lr",
                field<double>(s + ".peak_lr", [pick](PipelineConfig& c) -> auto& { return pick(c).peak_lr; }));
      m.emplace(s + ".warmup_fraction", field<double>(s + ".warmup_fraction", [pick](PipelineConfig& c) -> auto& {
                  return pick(c).warmup_fraction;
                }));
      m.emplace(s + ".eval_utterances", field<int>(s + ".eval_utterances", [pick](PipelineConfig& c) -> auto& {
                  return pick(c).eval_utterances;
                }));
    }
    HAP_FIELD(m, "finetune.utterances", finetune_utterances);

    HAP_FIELD(m, "eval.tolerance_frames", eval_tolerance);

    HAP_FIELD(m, "decode.preset", decode_preset);
    HAP_FIELD(m, "decode.beam_width", beam_width);
    m.emplace("decode.length_unit",
              Field{[](PipelineConfig& c, const std::string& v) {
                      if (v == "words") {
                        c.length_unit = LengthUnit::kWords;
                      } else if (v == "chars") {
                        c.length_unit = LengthUnit::kChars;
                      } else {
                        bad_value("decode.length_unit", v);
                      }
                    },
                    [](const PipelineConfig& c) {
                      return std::string(c.length_unit == LengthUnit::kWords ? "words" : "chars");
                    }});

    HAP_FIELD(m, "iteration2.layer", iteration2_layer);
    HAP_FIELD(m, "iteration2.k", iteration2_k);
    HAP_FIELD(m, "iteration2.max_iters", iteration2_max_iters);
    return m;
  }();
  return table;
}

#undef HAP_FIELD

}  // namespace

PipelineConfig::PipelineConfig() {
  // Desk-scale defaults for the synthetic corpus.
  kmeans.k = 100;
  ap.base_alphabet = 100;
  ap.vocab_size = 1000;
  pretrain.steps = 2000;
  pretrain.batch_size = 4;
  finetune.steps = 1500;
  finetune.batch_size = 2;
  finetune.peak_lr = 2e-3;
}

void PipelineConfig::validate() const {
  synth.validate();
  mfcc.validate();
  probe.validate();
  if (kmeans.k < 1) throw Error("config: kmeans.k must be >= 1");
  if (ap.base_alphabet != kmeans.k) {
    throw Error("config: ap.base_alphabet (" + std::to_string(ap.base_alphabet) + ") must equal kmeans.k (" +
                std::to_string(kmeans.k) + ")");
  }
  if (ap.vocab_size < ap.base_alphabet) throw Error("config: ap.vocab_size must be >= ap.base_alphabet");
  if (eval_tolerance < 0) throw Error("config: eval.tolerance_frames must be >= 0");
  if (!fusion_preset(decode_preset)) throw Error("config: unknown decode.preset '" + decode_preset + "'");
  if (beam_width < 1) throw Error("config: decode.beam_width must be >= 1");
  if (finetune_utterances < 1) throw Error("config: finetune.utterances must be >= 1");
  if (iteration2_layer < 0 || iteration2_layer > probe.layers) throw Error("config: iteration2.layer out of range");
  if (iteration2_k < 1) throw Error("config: iteration2.k must be >= 1");
  for (const TrainConfig* t : {&pretrain, &finetune}) {
    if (t->steps < 1 || t->batch_size < 1) throw Error("config: steps and batch_size must be positive");
    if (!(t->peak_lr > 0.0)) throw Error("config: peak_lr must be positive");
    if (!(t->warmup_fraction >= 0.0 && t->warmup_fraction <= 1.0)) {
      throw Error("config: warmup_fraction must lie in [0, 1]");
    }
  }
}

void apply_config_override(PipelineConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("config: override '" + assignment + "' is not section.key=value");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto it = fields().find(key);
  if (it == fields().end()) throw Error("config: unknown key '" + key + "'");
  it->second.set(config, value);
}

PipelineConfig parse_pipeline_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  PipelineConfig config;
  bool base_given = false;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error("config: key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      base_given |= full == "ap.base_alphabet";
      apply_config_override(config, full + "=" + value.data());
    }
  }
  if (!base_given) config.ap.base_alphabet = config.kmeans.k;
  return config;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  try {
    return parse_pipeline_config(read_text_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::string pipeline_config_to_ini(const PipelineConfig& config) {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, f] : fields()) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
  return out.str();
}

}  // namespace hubert_ap
