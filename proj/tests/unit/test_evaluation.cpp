#include <algorithm>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "hubert_ap/evaluation.hpp"
#include "hubert_ap/mfcc.hpp"
#include "hubert_ap/synth.hpp"
#include "hubert_ap/wav.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hubert_ap;

namespace {

std::vector<int> random_boundaries(Rng& rng, int max_count, int horizon) {
  std::vector<int> all(horizon - 1);
  std::iota(all.begin(), all.end(), 1);
  for (int i = static_cast<int>(all.size()) - 1; i > 0; --i) std::swap(all[i], all[rng.below(i + 1)]);
  all.resize(std::min<std::size_t>(all.size(), rng.below(max_count + 1)));
  std::sort(all.begin(), all.end());
  return all;
}

AlignmentTier tier(const std::string& id, const std::vector<std::pair<std::string, int>>& parts) {
  AlignmentTier t{id, {}};
  int at = 0;
  for (const auto& [phone, len] : parts) {
    t.intervals.push_back({phone, at, at + len});
    at += len;
  }
  return t;
}

}  // namespace

TEST_CASE("label_boundaries") {
  CHECK(label_boundaries({0, 0, 1, 1, 1}) == std::vector<int>{2});
  CHECK(label_boundaries({3, 3, 3}).empty());
  CHECK(label_boundaries({7}).empty());
  CHECK(label_boundaries({285, 285, 285, 285, 279, 279, 138, 374, 374, 374}) == std::vector<int>{4, 6, 7});
}

TEST_CASE("boundary_prf worked examples") {
  const auto same = boundary_prf({3, 8, 20}, {3, 8, 20}, 0);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const auto none = boundary_prf({}, {5, 9}, 1);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);

  const auto m = boundary_prf({4, 6, 11}, {5, 10}, 1);
  CHECK(m.counts.matched == 2);
  CHECK(m.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(m.tolerance_frames == 1);
}

TEST_CASE("boundary_prf agrees with the exhaustive matching oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 3000; ++trial) {
    const int horizon = rng.between(2, 16);
    const auto pred = random_boundaries(rng, 8, horizon);
    const auto gold = random_boundaries(rng, 8, horizon);
    const int tol = rng.between(0, 3);
    const int best = oracle::max_matching(pred, gold, tol);
    const auto got = boundary_prf(pred, gold, tol);
    REQUIRE(got.counts.matched == best);
    const auto want = oracle::prf(best, static_cast<int>(pred.size()), static_cast<int>(gold.size()));
    CHECK(got.precision == want.p);
    CHECK(got.recall == want.r);
    CHECK(got.f1 == want.f1);
  }
}

TEST_CASE("boundary_prf symmetry and tolerance monotonicity") {
  Rng rng(22);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_boundaries(rng, 10, 40);
    const auto b = random_boundaries(rng, 10, 40);
    for (int tol = 0; tol < 4; ++tol) {
      const auto ab = boundary_prf(a, b, tol);
      const auto ba = boundary_prf(b, a, tol);
      CHECK(ab.precision == ba.recall);
      CHECK(ab.recall == ba.precision);
      CHECK(ab.f1 == ba.f1);
      const auto wider = boundary_prf(a, b, tol + 1);
      CHECK(wider.precision >= ab.precision);
      CHECK(wider.recall >= ab.recall);
      CHECK(wider.f1 >= ab.f1);
    }
  }
}

TEST_CASE("boundary_prf rejects unsorted input and negative tolerance") {
  CHECK_THROWS_AS(boundary_prf({5, 3}, {1}, 1), Error);
  CHECK_THROWS_AS(boundary_prf({1}, {4, 4}, 1), Error);
  CHECK_THROWS_AS(boundary_prf({1}, {4}, -1), Error);
}

TEST_CASE("corpus metrics pool counts before dividing") {
  const std::vector<IdSequence> labels{{"a", {1, 1, 2, 2}}, {"b", {0, 1, 2, 3, 4, 5}}};
  const std::vector<AlignmentTier> align{tier("a", {{"x", 2}, {"y", 2}}), tier("b", {{"x", 6}})};
  const auto m = corpus_boundary_prf(labels, align, 0);
  CHECK(m.counts.matched == 1);
  CHECK(m.counts.predicted == 6);
  CHECK(m.counts.golden == 1);
  CHECK(m.precision == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(m.recall == 1.0);
  // Length mismatch and missing utterance are errors.
  CHECK_THROWS_AS(corpus_boundary_prf({{"a", {1, 2}}}, align, 0), Error);
  CHECK_THROWS_AS(corpus_boundary_prf({{"zz", {1, 2}}}, align, 0), Error);
}

TEST_CASE("sharing_percentage worked examples") {
  SUBCASE("identical code sets") {
    const auto r = sharing_percentage({{"u", {1, 2, 2, 1, 1, 2}}}, {tier("u", {{"p", 3}, {"p", 3}})});
    REQUIRE(r.mean_percentage.has_value());
    CHECK(*r.mean_percentage == 1.0);
  }
  SUBCASE("disjoint code sets") {
    const auto r = sharing_percentage({{"u", {1, 1, 2, 2}}}, {tier("u", {{"p", 2}, {"p", 2}})});
    CHECK(*r.mean_percentage == 0.0);
  }
  SUBCASE("hand computed 7/12") {
    const auto r = sharing_percentage({{"u", {7, 7, 9}}, {"v", {7, 8}}},
                                      {tier("u", {{"p", 3}}), tier("v", {{"p", 2}})});
    REQUIRE(r.phones.size() == 1);
    CHECK(r.phones[0].occurrences == 2);
    CHECK(*r.phones[0].percentage == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  }
  SUBCASE("single occurrence is undefined and excluded") {
    const auto r = sharing_percentage({{"u", {1, 1, 2, 2, 3}}}, {tier("u", {{"p", 2}, {"p", 2}, {"q", 1}})});
    REQUIRE(r.phones.size() == 2);
    CHECK(r.phones[0].phone == "p");
    CHECK(r.phones[1].phone == "q");
    CHECK_FALSE(r.phones[1].percentage.has_value());
    CHECK(*r.mean_percentage == 0.0);
  }
  SUBCASE("nothing defined") {
    const auto r = sharing_percentage({{"u", {1}}}, {tier("u", {{"q", 1}})});
    CHECK_FALSE(r.mean_percentage.has_value());
  }
}

TEST_CASE("sharing_percentage is invariant to order and code relabeling") {
  Rng rng(23);
  std::vector<CodeSequence> corpus;
  std::vector<AlignmentTier> align;
  for (int u = 0; u < 12; ++u) {
    std::vector<std::pair<std::string, int>> parts;
    CodeSequence s{"u" + std::to_string(u), {}};
    for (int k = 0; k < 6; ++k) {
      const std::string phone(1, static_cast<char>('a' + rng.below(4)));
      const int len = rng.between(1, 5);
      parts.emplace_back(phone, len);
      for (int f = 0; f < len; ++f) s.ids.push_back(static_cast<int>(rng.below(10)));
    }
    corpus.push_back(s);
    align.push_back(tier(s.utt_id, parts));
  }
  const auto base = sharing_percentage(corpus, align);
  REQUIRE(base.mean_percentage.has_value());

  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 9; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  auto relabeled = corpus;
  for (auto& s : relabeled) {
    for (int& c : s.ids) c = perm[c];
  }
  std::reverse(relabeled.begin(), relabeled.end());
  auto shuffled_align = align;
  std::rotate(shuffled_align.begin(), shuffled_align.begin() + 5, shuffled_align.end());
  const auto other = sharing_percentage(relabeled, shuffled_align);
  REQUIRE(other.phones.size() == base.phones.size());
  for (std::size_t i = 0; i < base.phones.size(); ++i) {
    CHECK(other.phones[i].phone == base.phones[i].phone);
    CHECK(other.phones[i].percentage == base.phones[i].percentage);
  }
  CHECK(*other.mean_percentage == *base.mean_percentage);
  for (const auto& p : base.phones) {
    if (p.percentage) {
      CHECK(*p.percentage >= 0.0);
      CHECK(*p.percentage <= 1.0);
    }
  }
}

TEST_CASE("sharing_percentage rejects misaligned lengths") {
  CHECK_THROWS_AS(sharing_percentage({{"u", {1, 2}}}, {tier("u", {{"p", 3}})}), Error);
  CHECK_THROWS_AS(sharing_percentage({{"v", {1, 2, 3}}}, {tier("u", {{"p", 3}})}), Error);
}

TEST_CASE("alignment TSV round trip and validation") {
  const std::vector<AlignmentTier> tiers{tier("a", {{"sil", 2}, {"p3", 5}, {"sil", 1}}), tier("b", {{"x", 4}})};
  std::stringstream ss;
  write_alignments(ss, tiers);
  CHECK(ss.str().rfind("a\tsil\t0\t2\n", 0) == 0);
  CHECK(read_alignments(ss) == tiers);
  CHECK(tiers[0].boundaries() == std::vector<int>{2, 7});
  CHECK(tiers[0].num_frames() == 8);

  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_alignments(in);
  };
  CHECK_THROWS_AS(parse("a\tp\t0\n"), Error);
  CHECK_THROWS_AS(parse("a\tp\t0\tx\n"), Error);
  CHECK_THROWS_AS(parse("a\tp\t0\t2\na\tq\t3\t4\n"), Error);
  CHECK_THROWS_AS(parse("a\tp\t0\t2\nb\tq\t0\t1\na\tr\t2\t3\n"), Error);
  CHECK_THROWS_AS(parse("a\t\t0\t2\n"), Error);
}

TEST_CASE("synth_corpus is deterministic and exact by construction") {
  SynthConfig cfg;
  cfg.num_utterances = 6;
  const SynthCorpus a = synth_corpus(cfg, 5);
  const SynthCorpus b = synth_corpus(cfg, 5);
  REQUIRE(a.utterances.size() == 6);
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(encode_wav_pcm16(a.utterances[i].audio) == encode_wav_pcm16(b.utterances[i].audio));
    CHECK(a.utterances[i].alignment == b.utterances[i].alignment);
    CHECK(a.utterances[i].transcript == b.utterances[i].transcript);
  }
  const SynthCorpus c = synth_corpus(cfg, 6);
  CHECK(encode_wav_pcm16(c.utterances[0].audio) != encode_wav_pcm16(a.utterances[0].audio));

  const MfccConfig mfcc;
  for (const auto& u : a.utterances) {
    u.alignment.validate();
    int total = 0;
    for (const auto& iv : u.alignment.intervals) total += iv.end - iv.start;
    CHECK(total == u.alignment.num_frames());
    // Feature frames line up with the alignment.
    CHECK(compute_mfcc(u.audio, mfcc).num_frames() == u.alignment.num_frames());
    // Transcript spells the non-silence phones.
    std::string spelled;
    for (const auto& iv : u.alignment.intervals) {
      if (iv.phone == kSilencePhone) continue;
      const auto it = std::find(a.phones.begin(), a.phones.end(), iv.phone);
      REQUIRE(it != a.phones.end());
      spelled += phone_char(static_cast<int>(it - a.phones.begin()));
    }
    std::string letters = u.transcript;
    letters.erase(std::remove(letters.begin(), letters.end(), ' '), letters.end());
    CHECK(letters == spelled);
  }
}

TEST_CASE("synth_corpus forced durations") {
  SynthConfig cfg;
  cfg.num_utterances = 4;
  cfg.min_phone_frames = cfg.max_phone_frames = 4;
  cfg.min_sil_frames = cfg.max_sil_frames = 4;
  for (const auto& u : synth_corpus(cfg, 9).utterances) {
    for (const auto& iv : u.alignment.intervals) CHECK(iv.end - iv.start == 4);
  }
}

TEST_CASE("synth_corpus rejects invalid ranges") {
  SynthConfig cfg;
  cfg.min_phone_frames = 9;
  cfg.max_phone_frames = 3;
  CHECK_THROWS_AS(synth_corpus(cfg, 1), Error);
  cfg = SynthConfig{};
  cfg.num_phones = 1;
  CHECK_THROWS_AS(synth_corpus(cfg, 1), Error);
  cfg = SynthConfig{};
  cfg.num_utterances = 0;
  CHECK_THROWS_AS(synth_corpus(cfg, 1), Error);
}
