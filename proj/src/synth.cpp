#include "cgan/synth.hpp"

#include <array>
#include <cctype>
#include <vector>

#include "cgan/corpus.hpp"
#include "cgan/rng.hpp"

namespace cgan {

namespace {

using Words = std::vector<const char*>;

const Words kDet{"the", "a", "my", "your", "every", "no"};
const Words kAdj{"silver", "quiet", "broken", "golden", "distant", "pale", "wild", "hollow", "bright", "cold",
                 "gentle", "burning", "lonely", "ancient", "restless", "tender"};
const Words kNoun{"moon", "river", "heart", "city", "stone", "sea", "night", "garden", "bird", "light",
                  "shadow", "song", "window", "fire", "road", "rain", "mountain", "dream", "voice", "field"};
const Words kVerbIntr{"sleeps", "burns", "waits", "falls", "sings", "wanders", "fades", "trembles", "shines",
                      "whispers"};
const Words kVerbTr{"holds", "remembers", "follows", "breaks", "carries", "finds", "loses", "keeps", "calls",
                    "hides"};
const Words kPrep{"over", "beneath", "beside", "through", "across", "into", "under", "beyond"};
const Words kAdv{"slowly", "softly", "again", "alone", "tonight", "forever"};

const char* pick(const Words& w, Rng& rng) { return w[rng.index(w.size())]; }

void noun_phrase(std::vector<std::string>& out, Rng& rng) {
  out.emplace_back(pick(kDet, rng));
  if (rng.bernoulli(0.6)) out.emplace_back(pick(kAdj, rng));
  out.emplace_back(pick(kNoun, rng));
}

std::vector<std::string> line(Rng& rng) {
  std::vector<std::string> w;
  noun_phrase(w, rng);
  if (rng.bernoulli(0.5)) {
    w.emplace_back(pick(kVerbIntr, rng));
    if (rng.bernoulli(0.6)) {
      w.emplace_back(pick(kPrep, rng));
      noun_phrase(w, rng);
    } else if (rng.bernoulli(0.5)) {
      w.emplace_back(pick(kAdv, rng));
    }
  } else {
    w.emplace_back(pick(kVerbTr, rng));
    noun_phrase(w, rng);
    if (rng.bernoulli(0.3)) w.emplace_back(pick(kAdv, rng));
  }
  w.emplace_back(rng.bernoulli(0.7) ? "," : ".");
  return w;
}

std::string render(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string w = words[i];
    if (i == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    const bool punct = w == "," || w == ".";
    if (i > 0 && !punct) s += ' ';
    s += w;
  }
  return s;
}

}  // namespace

std::string synthetic_grammar_text(std::uint64_t seed, std::size_t target_tokens) {
  Rng rng(seed);
  std::string text;
  std::size_t tokens = 0;
  while (tokens < target_tokens) {
    const std::size_t lines = 2 + rng.index(3);
    std::string stanza;
    for (std::size_t l = 0; l < lines; ++l) {
      auto w = line(rng);
      if (l + 1 == lines) w.back() = ".";
      if (l > 0) stanza += '\n';
      stanza += render(w);
    }
    tokens += tokenize(stanza).size();
    if (!text.empty()) text += "\n\n";
    text += stanza;
  }
  return text + "\n";
}

std::string periodic_text(std::size_t tokens) {
  static constexpr std::array<const char*, 3> kCycle{"a", "b", "c"};
  std::string text;
  for (std::size_t i = 0; i < tokens; ++i) {
    if (i > 0) text += ' ';
    text += kCycle[i % 3];
  }
  return text + "\n";
}

}  // namespace cgan
