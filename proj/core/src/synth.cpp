#include "hubert_ap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "hubert_ap/common.hpp"
#include "hubert_ap/io.hpp"
#include "hubert_ap/manifest.hpp"
#include "hubert_ap/mfcc.hpp"

namespace hubert_ap {
namespace {

constexpr int kHopSamples = 320;
constexpr int kWindowSamples = 400;

struct Partial {
  double freq;
  double amp;
};

struct PhoneVoice {
  std::vector<Partial> partials;
  double glide;        // relative frequency change from onset to offset
  double noise_center;  // Hz
  double noise_amp;
};

/// RBJ band-pass biquad (constant 0 dB peak gain).
class Resonator {
 public:
  Resonator(double center_hz, double q) {
    const double w0 = 2.0 * std::numbers::pi * center_hz / kSampleRate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0_ = alpha / a0;
    b2_ = -alpha / a0;
    a1_ = -2.0 * std::cos(w0) / a0;
    a2_ = (1.0 - alpha) / a0;
  }
  double step(double x) {
    const double y = b0_ * x + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double b0_, b2_, a1_, a2_;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

std::vector<PhoneVoice> make_voices(int num_phones, Rng& rng) {
  // Log-spaced grid of partial frequencies; each phone draws a distinct subset.
  std::vector<double> grid;
  for (int i = 0; i < 24; ++i) grid.push_back(250.0 * std::pow(3800.0 / 250.0, i / 23.0));
  std::set<std::vector<int>> used;
  std::vector<PhoneVoice> voices;
  while (static_cast<int>(voices.size()) < num_phones) {
    const int n = rng.between(2, 3);
    std::vector<int> pick;
    while (static_cast<int>(pick.size()) < n) {
      const int g = static_cast<int>(rng.below(grid.size()));
      if (std::find(pick.begin(), pick.end(), g) == pick.end()) pick.push_back(g);
    }
    std::sort(pick.begin(), pick.end());
    if (!used.insert(pick).second) continue;
    PhoneVoice v;
    double total = 0.0;
    for (int g : pick) {
      v.partials.push_back({grid[g], 0.3 + 0.7 * rng.uniform()});
      total += v.partials.back().amp;
    }
    for (auto& p : v.partials) p.amp *= 0.5 / total;
    v.glide = (rng.uniform() * 2.0 - 1.0) * 0.08;
    v.noise_center = grid[rng.below(grid.size())];
    v.noise_amp = 0.05 + 0.1 * rng.uniform();
    voices.push_back(std::move(v));
  }
  return voices;
}

std::string make_word(int len, int num_phones, Rng& rng) {
  std::string w;
  int prev = -1;
  for (int i = 0; i < len; ++i) {
    int p;
    do {
      p = static_cast<int>(rng.below(num_phones));
    } while (p == prev && num_phones > 1);
    w.push_back(phone_char(p));
    prev = p;
  }
  return w;
}

void render_phone(const PhoneVoice& voice, int begin, int end, Rng& rng, std::vector<double>& out) {
  const double gain = 0.85 + 0.3 * rng.uniform();
  const double detune = 0.985 + 0.03 * rng.uniform();
  Resonator res(voice.noise_center, 4.0);
  std::vector<double> phase(voice.partials.size());
  for (auto& ph : phase) ph = 2.0 * std::numbers::pi * rng.uniform();
  const int len = end - begin;
  for (int i = 0; i < len; ++i) {
    const double progress = static_cast<double>(i) / std::max(1, len - 1);
    const double bend = 1.0 + voice.glide * (progress - 0.5);
    double s = 0.0;
    for (std::size_t k = 0; k < voice.partials.size(); ++k) {
      const double f = voice.partials[k].freq * detune * bend;
      phase[k] += 2.0 * std::numbers::pi * f / kSampleRate;
      s += voice.partials[k].amp * std::sin(phase[k]);
    }
    s += voice.noise_amp * res.step(rng.normal());
    out[begin + i] += gain * s;
  }
}

}  // namespace

char phone_char(int p) { return static_cast<char>('a' + p); }

void SynthConfig::validate() const {
  auto range = [](int lo, int hi, int floor, const char* what) {
    if (lo < floor || hi < lo) throw Error(std::string("synth: invalid ") + what + " range");
  };
  if (num_phones < 2 || num_phones > 26) throw Error("synth: num_phones must be in [2, 26]");
  range(min_phone_frames, max_phone_frames, 1, "phone duration");
  range(min_utt_phones, max_utt_phones, 1, "utterance length");
  range(min_sil_frames, max_sil_frames, 1, "silence duration");
  if (num_utterances < 1) throw Error("synth: num_utterances must be positive");
  if (lexicon_size < 1) throw Error("synth: lexicon_size must be positive");
  if (max_word_phones < 1) throw Error("synth: max_word_phones must be positive");
  if (!(noise_level >= 0.0)) throw Error("synth: noise_level must be non-negative");
}

SynthCorpus synth_corpus(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  SynthCorpus corpus;
  for (int p = 0; p < config.num_phones; ++p) corpus.phones.push_back(std::string(1, phone_char(p)));
  const auto voices = make_voices(config.num_phones, rng);

  // Word 0 is a single phone so any remaining phone budget can be filled.
  std::set<std::string> words;
  corpus.lexicon.push_back(make_word(1, config.num_phones, rng));
  words.insert(corpus.lexicon.back());
  while (static_cast<int>(corpus.lexicon.size()) < config.lexicon_size) {
    const std::string w = make_word(rng.between(1, config.max_word_phones), config.num_phones, rng);
    if (words.insert(w).second) corpus.lexicon.push_back(w);
  }

  for (int u = 0; u < config.num_utterances; ++u) {
    SynthUtterance utt;
    char name[32];
    std::snprintf(name, sizeof name, "utt%04d", u);
    utt.utt_id = name;
    utt.alignment.utt_id = utt.utt_id;

    const int target = rng.between(config.min_utt_phones, config.max_utt_phones);
    std::vector<std::string> sentence;
    int count = 0;
    while (count < target) {
      std::vector<int> fits;
      for (int w = 0; w < static_cast<int>(corpus.lexicon.size()); ++w) {
        if (static_cast<int>(corpus.lexicon[w].size()) <= config.max_utt_phones - count) fits.push_back(w);
      }
      const auto& w = corpus.lexicon[fits[rng.below(fits.size())]];
      sentence.push_back(w);
      count += static_cast<int>(w.size());
    }

    // Interval layout: sil, word, sil, word, ..., sil. Phone ids >= 0, sil = -1.
    std::vector<std::pair<int, int>> layout;  // (phone id, frames)
    auto sil = [&] { layout.emplace_back(-1, rng.between(config.min_sil_frames, config.max_sil_frames)); };
    sil();
    for (std::size_t w = 0; w < sentence.size(); ++w) {
      if (w) {
        sil();
        utt.transcript.push_back(' ');
      }
      for (char c : sentence[w]) {
        layout.emplace_back(c - 'a', rng.between(config.min_phone_frames, config.max_phone_frames));
        utt.transcript.push_back(c);
      }
    }
    sil();

    int frames = 0;
    for (const auto& [p, len] : layout) {
      utt.alignment.intervals.push_back(
          {p < 0 ? std::string(kSilencePhone) : corpus.phones[p], frames, frames + len});
      frames += len;
    }
    const int num_samples = (frames - 1) * kHopSamples + kWindowSamples;
    utt.audio.samples.assign(num_samples, 0.0);
    for (const auto& iv : utt.alignment.intervals) {
      if (iv.phone == kSilencePhone) continue;
      const int begin = iv.start * kHopSamples;
      const int end = iv.end == frames ? num_samples : iv.end * kHopSamples;
      render_phone(voices[iv.phone[0] - 'a'], begin, end, rng, utt.audio.samples);
    }
    for (auto& s : utt.audio.samples) s = std::clamp(s + config.noise_level * rng.normal(), -1.0, 1.0);
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir / "wav");
  std::vector<AlignmentTier> tiers;
  std::string text;
  Manifest manifest;
  for (const auto& u : corpus.utterances) {
    const auto rel = std::filesystem::path("wav") / (u.utt_id + ".wav");
    write_wav_pcm16(dir / rel, u.audio);
    tiers.push_back(u.alignment);
    text += u.utt_id + "\t" + u.transcript + "\n";
    manifest.records.push_back({u.utt_id, rel, u.transcript, std::filesystem::path("align.tsv")});
  }
  write_alignments(dir / "align.tsv", tiers);
  write_text_file(dir / "text.tsv", text);
  std::string lex;
  for (const auto& w : corpus.lexicon) lex += w + "\n";
  write_text_file(dir / "lexicon.txt", lex);
  write_manifest(dir / "manifest.tsv", manifest);
}

}  // namespace hubert_ap
