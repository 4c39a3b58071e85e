#include "hubert_ap/arpa.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "hubert_ap/common.hpp"
#include "hubert_ap/io.hpp"

namespace hubert_ap {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

double parse_number(const std::string& tok, int lineno) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size()) throw Error("arpa line " + std::to_string(lineno) + ": bad number '" + tok + "'");
  return v;
}

std::string format_log10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

}  // namespace

int NGramLM::word_id(const std::string& word) const {
  auto it = vocab_.find(word);
  if (it != vocab_.end()) return it->second;
  it = vocab_.find(kUnk);
  return it != vocab_.end() ? it->second : -1;
}

const NGramLM::Entry* NGramLM::find(const std::vector<int>& ngram) const {
  if (ngram.empty() || static_cast<int>(ngram.size()) > order_) return nullptr;
  const auto& table = tables_[ngram.size() - 1];
  const auto it = table.find(ngram);
  return it == table.end() ? nullptr : &it->second;
}

double NGramLM::conditional(const std::vector<int>& context, int word) const {
  if (word < 0) return kMissingUnkLog10;
  const std::size_t keep = std::min<std::size_t>(context.size(), static_cast<std::size_t>(order_ - 1));
  std::vector<int> ctx(context.end() - static_cast<std::ptrdiff_t>(keep), context.end());
  double backoff = 0.0;
  while (true) {
    std::vector<int> ngram = ctx;
    ngram.push_back(word);
    if (const Entry* e = find(ngram)) return backoff + e->logprob;
    if (ctx.empty()) return kMissingUnkLog10;  // word listed nowhere as a unigram
    if (const Entry* c = find(ctx)) backoff += c->backoff;
    ctx.erase(ctx.begin());
  }
}

NGramLM arpa_load(const std::string& text) {
  NGramLM lm;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  enum class Section { kPreamble, kData, kNgrams, kEnd } section = Section::kPreamble;
  std::vector<std::size_t> declared;
  int current = 0;
  auto fail = [&](const std::string& msg) { throw Error("arpa line " + std::to_string(lineno) + ": " + msg); };

  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line == "\\data\\") {
      if (section != Section::kPreamble) fail("unexpected \\data\\");
      section = Section::kData;
      continue;
    }
    if (line == "\\end\\") {
      if (section != Section::kNgrams) fail("\\end\\ before any n-gram section");
      section = Section::kEnd;
      break;
    }
    if (line.front() == '\\') {
      int n = 0;
      if (std::sscanf(line.c_str(), "\\%d-grams:", &n) != 1 || line != "\\" + std::to_string(n) + "-grams:") {
        fail("unknown section header '" + line + "'");
      }
      if (section == Section::kPreamble) fail("n-gram section before \\data\\");
      if (n != current + 1 || n > static_cast<int>(declared.size())) fail("unexpected section '" + line + "'");
      if (current > 0 && lm.tables_[current - 1].size() != declared[current - 1]) {
        fail(std::to_string(current) + "-gram count does not match header");
      }
      current = n;
      section = Section::kNgrams;
      continue;
    }
    if (section == Section::kPreamble) continue;
    if (section == Section::kData) {
      int n = 0;
      long long count = -1;
      if (std::sscanf(line.c_str(), "ngram %d=%lld", &n, &count) != 2 || n < 1 || count < 0) {
        fail("malformed count line '" + line + "'");
      }
      if (n != static_cast<int>(declared.size()) + 1) fail("n-gram counts out of order");
      declared.push_back(static_cast<std::size_t>(count));
      lm.order_ = n;
      lm.tables_.resize(n);
      continue;
    }
    // n-gram entry: logprob w1 .. wn [backoff]
    const auto tok = tokens(line);
    const auto n = static_cast<std::size_t>(current);
    if (tok.size() != n + 1 && tok.size() != n + 2) fail("expected " + std::to_string(n) + " words");
    NGramLM::Entry e;
    e.logprob = parse_number(tok[0], lineno);
    if (e.logprob > 0.0) fail("log probability must be <= 0");
    if (tok.size() == n + 2) {
      if (current == lm.order_) fail("highest-order n-gram cannot carry a backoff weight");
      e.backoff = parse_number(tok[n + 1], lineno);
    }
    std::vector<int> ids;
    for (std::size_t i = 1; i <= n; ++i) {
      auto it = lm.vocab_.find(tok[i]);
      if (it == lm.vocab_.end()) {
        if (current != 1) fail("word '" + tok[i] + "' missing from the unigram section");
        it = lm.vocab_.emplace(tok[i], static_cast<int>(lm.vocab_.size())).first;
      }
      ids.push_back(it->second);
    }
    if (n > 1) {
      const std::vector<int> ctx(ids.begin(), ids.end() - 1);
      if (!lm.find(ctx)) fail("context of n-gram is not listed at order " + std::to_string(n - 1));
    }
    if (!lm.tables_[n - 1].emplace(ids, e).second) fail("duplicate n-gram");
  }
  if (section != Section::kEnd) throw Error("arpa: missing \\end\\ marker");
  // lineno still points at the \end\ marker.
  if (current != lm.order_) fail("missing " + std::to_string(lm.order_) + "-gram section");
  if (lm.tables_[current - 1].size() != declared[current - 1]) {
    fail(std::to_string(current) + "-gram count does not match header");
  }
  return lm;
}

NGramLM arpa_load_file(const std::filesystem::path& path) {
  try {
    return arpa_load(read_text_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

double lm_logprob(const NGramLM& lm, const std::vector<std::string>& words, bool add_eos) {
  std::vector<int> context{lm.word_id(NGramLM::kBos)};
  double total = 0.0;
  for (const auto& w : words) {
    const int id = lm.word_id(w);
    total += lm.conditional(context, id);
    context.push_back(id);
  }
  if (add_eos) total += lm.conditional(context, lm.word_id(NGramLM::kEos));
  return total;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string estimate_bigram_arpa(const std::vector<std::string>& sentences, double discount) {
  if (!(discount > 0.0 && discount < 1.0)) throw Error("arpa: discount must be in (0, 1)");
  std::map<std::string, long long> uni;
  std::map<std::pair<std::string, std::string>, long long> bi;
  std::map<std::string, long long> ctx_total;
  for (const auto& s : sentences) {
    auto words = split_words(s);
    words.insert(words.begin(), NGramLM::kBos);
    words.push_back(NGramLM::kEos);
    for (std::size_t i = 1; i < words.size(); ++i) {
      ++uni[words[i]];
      ++bi[{words[i - 1], words[i]}];
      ++ctx_total[words[i - 1]];
    }
  }
  uni.emplace(NGramLM::kUnk, 0);
  uni.emplace(NGramLM::kEos, 0);
  long long total = 0;
  for (const auto& [w, c] : uni) total += c;
  const double denom = static_cast<double>(total + static_cast<long long>(uni.size()));
  std::map<std::string, double> p_uni;
  for (const auto& [w, c] : uni) p_uni[w] = (static_cast<double>(c) + 1.0) / denom;

  std::map<std::string, double> backoff;
  std::vector<std::pair<std::pair<std::string, std::string>, double>> bigrams;
  for (const auto& [ctx, ctot] : ctx_total) {
    double kept = 0.0, covered = 0.0;
    for (auto it = bi.lower_bound({ctx, std::string()}); it != bi.end() && it->first.first == ctx; ++it) {
      const double p = (static_cast<double>(it->second) - discount) / static_cast<double>(ctot);
      bigrams.emplace_back(it->first, p);
      kept += p;
      covered += p_uni[it->first.second];
    }
    backoff[ctx] = covered < 1.0 ? (1.0 - kept) / (1.0 - covered) : 1.0;
  }

  std::ostringstream out;
  out << "\\data\\\n";
  out << "ngram 1=" << uni.size() + 1 << "\n";
  out << "ngram 2=" << bigrams.size() << "\n\n";
  out << "\\1-grams:\n";
  auto bo = [&](const std::string& w) {
    const auto it = backoff.find(w);
    return it == backoff.end() ? std::string() : "\t" + format_log10(std::log10(it->second));
  };
  // <s> is never predicted; its probability is a placeholder.
  out << format_log10(-99.0) << "\t" << NGramLM::kBos << bo(NGramLM::kBos) << "\n";
  for (const auto& [w, p] : p_uni) out << format_log10(std::log10(p)) << "\t" << w << bo(w) << "\n";
  out << "\n\\2-grams:\n";
  for (const auto& [pair, p] : bigrams) {
    out << format_log10(std::log10(p)) << "\t" << pair.first << " " << pair.second << "\n";
  }
  out << "\n\\end\\\n";
  return out.str();
}

}  // namespace hubert_ap
