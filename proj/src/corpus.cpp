#include "cgan/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "cgan/rng.hpp"

namespace cgan {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t begin;
  std::size_t length;
};

std::vector<CodePoint> decode_utf8(std::string_view text) {
  std::vector<CodePoint> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len;
    char32_t cp;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      throw Utf8Error(i, "invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + len > text.size()) {
      throw Utf8Error(i, "truncated UTF-8 sequence at offset " + std::to_string(i));
    }
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) {
        throw Utf8Error(i + k, "invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw Utf8Error(i, "invalid UTF-8 code point at offset " + std::to_string(i));
    }
    out.push_back({cp, i, len});
    i += len;
  }
  return out;
}

bool is_space(char32_t c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

bool is_apostrophe(char32_t c) { return c == U'\'' || c == U'’'; }

bool is_word_char(char32_t c) {
  if (c < 0x80) return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
  // Latin-1 punctuation and the general punctuation block split off.
  if (c >= 0xA0 && c <= 0xBF) return false;
  if (c == 0xD7 || c == 0xF7) return false;
  if (c >= 0x2000 && c <= 0x206F) return false;
  return true;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  const auto cps = decode_utf8(text);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < cps.size()) {
    const char32_t c = cps[i].value;
    if (c == '\n') {
      tokens.emplace_back(kNewline);
      ++i;
    } else if (is_space(c)) {
      ++i;
    } else if (is_word_char(c)) {
      std::size_t j = i + 1;
      while (j < cps.size()) {
        if (is_word_char(cps[j].value)) {
          ++j;
        } else if (is_apostrophe(cps[j].value) && j + 1 < cps.size() && is_word_char(cps[j + 1].value)) {
          j += 2;
        } else {
          break;
        }
      }
      std::string word(text.substr(cps[i].begin, cps[j - 1].begin + cps[j - 1].length - cps[i].begin));
      if (c >= 'A' && c <= 'Z') tokens.emplace_back(kUpperMarker);
      for (auto& ch : word) {
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
      }
      tokens.push_back(std::move(word));
      i = j;
    } else {
      tokens.emplace_back(text.substr(cps[i].begin, cps[i].length));
      ++i;
    }
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<unk>", "<pad>", "<bos>", "<eos>"}) add(s);
}

void Vocabulary::add(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& tokens, int min_freq,
                             std::size_t max_size) {
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  if (max_size < kNumSpecials) {
    throw std::invalid_argument("build_vocab: max_size must cover the " +
                                std::to_string(kNumSpecials) + " special tokens");
  }
  Vocabulary vocab;
  struct Stat {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Stat> stats;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto [it, inserted] = stats.try_emplace(tokens[i]);
    if (inserted) it->second.first = i;
    ++it->second.count;
  }
  std::vector<std::pair<std::string, Stat>> ranked;
  for (auto& [tok, st] : stats) {
    if (st.count >= static_cast<std::size_t>(min_freq) && !vocab.contains(tok)) ranked.emplace_back(tok, st);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first < b.second.first;
  });
  for (const auto& entry : ranked) {
    if (vocab.size() >= max_size) break;
    vocab.add(entry.first);
  }
  return vocab;
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " outside 0.." +
                            std::to_string(id_to_token_.size() - 1));
  }
  return id_to_token_[id];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

TokenIds Vocabulary::encode(const std::vector<std::string>& tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const TokenIds& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::detokenize(const TokenIds& ids) const {
  std::string out;
  bool capitalize = false;
  bool line_start = true;
  for (int i : ids) {
    if (i == kBos || i == kPad) continue;
    if (i == kEos) break;
    const auto& tok = token(i);
    if (tok == kUpperMarker) {
      capitalize = true;
      continue;
    }
    if (tok == kNewline) {
      out += '\n';
      line_start = true;
      continue;
    }
    if (!line_start) out += ' ';
    std::string word = tok;
    if (capitalize && !word.empty() && word[0] >= 'a' && word[0] <= 'z') {
      word[0] = static_cast<char>(word[0] - 'a' + 'A');
    }
    capitalize = false;
    out += word;
    line_start = false;
  }
  return out;
}

void Vocabulary::save(std::ostream& out) const {
  out << "cgan-vocab 1 unk=" << kUnk << " pad=" << kPad << " bos=" << kBos << " eos=" << kEos << '\n';
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\t' << i << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw CorpusError("vocab: missing header line");
  std::ostringstream expected;
  expected << "cgan-vocab 1 unk=" << kUnk << " pad=" << kPad << " bos=" << kBos << " eos=" << kEos;
  if (header != expected.str()) throw CorpusError("vocab: unsupported header '" + header + "'");
  Vocabulary vocab;
  vocab.id_to_token_.clear();
  vocab.token_to_id_.clear();
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) {
      throw CorpusError("vocab: line " + std::to_string(lineno) + " is not token<TAB>id");
    }
    const std::string tok = line.substr(0, tab);
    std::size_t id;
    try {
      std::size_t used = 0;
      id = std::stoul(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw CorpusError("vocab: line " + std::to_string(lineno) + " has a malformed id");
    }
    if (id != vocab.id_to_token_.size()) {
      throw CorpusError("vocab: line " + std::to_string(lineno) + " expected id " +
                        std::to_string(vocab.id_to_token_.size()));
    }
    if (vocab.token_to_id_.count(tok)) {
      throw CorpusError("vocab: duplicate token '" + tok + "' on line " + std::to_string(lineno));
    }
    vocab.add(tok);
  }
  const Vocabulary defaults;
  for (int s = 0; s < kNumSpecials; ++s) {
    if (vocab.size() <= static_cast<std::size_t>(s) || vocab.id_to_token_[s] != defaults.id_to_token_[s]) {
      throw CorpusError("vocab: special token ids do not match the header");
    }
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  save(out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  return load(in);
}

template <typename Doc>
Split<Doc> split_documents(std::vector<Doc> docs, std::uint64_t seed) {
  if (docs.size() < 10) {
    throw CorpusError("split: need at least 10 documents, got " + std::to_string(docs.size()));
  }
  Rng rng(seed);
  // Fisher-Yates with the portable generator.
  for (std::size_t i = docs.size(); i > 1; --i) {
    std::swap(docs[i - 1], docs[rng.index(i)]);
  }
  const std::size_t tenth = docs.size() / 10;
  Split<Doc> out;
  out.test.assign(std::make_move_iterator(docs.begin()), std::make_move_iterator(docs.begin() + tenth));
  out.valid.assign(std::make_move_iterator(docs.begin() + tenth),
                   std::make_move_iterator(docs.begin() + 2 * tenth));
  out.train.assign(std::make_move_iterator(docs.begin() + 2 * tenth), std::make_move_iterator(docs.end()));
  return out;
}

template Split<std::string> split_documents(std::vector<std::string>, std::uint64_t);
template Split<Document> split_documents(std::vector<Document>, std::uint64_t);

SplitCorpus split_corpus(std::vector<Document> docs, std::uint64_t seed) {
  auto s = split_documents(std::move(docs), seed);
  return {std::move(s.train), std::move(s.valid), std::move(s.test), seed};
}

std::vector<std::string> split_documents_text(std::string_view text) {
  std::vector<std::string> docs;
  std::string current;
  std::size_t pos = 0;
  auto flush = [&] {
    if (!current.empty()) docs.push_back(std::move(current));
    current.clear();
  };
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const bool blank = line.find_first_not_of(" \t\f\v") == std::string_view::npos;
    if (blank) {
      flush();
    } else {
      if (!current.empty()) current += '\n';
      current += line;
    }
    pos = end + 1;
  }
  flush();
  return docs;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> ingest_files(const std::vector<std::filesystem::path>& paths) {
  std::vector<std::string> docs;
  for (const auto& p : paths) {
    const auto text = read_text_file(p);
    try {
      decode_utf8(text);
    } catch (const Utf8Error& e) {
      throw Utf8Error(e.offset(), p.string() + ": " + e.what());
    }
    auto part = split_documents_text(text);
    docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return docs;
}

void write_documents(const std::filesystem::path& path, const std::vector<std::string>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i) out << '\n';
    out << docs[i] << '\n';
  }
}

TokenIds to_stream(const std::vector<Document>& docs) {
  TokenIds stream;
  for (const auto& d : docs) {
    stream.push_back(Vocabulary::kBos);
    stream.insert(stream.end(), d.begin(), d.end());
    stream.push_back(Vocabulary::kEos);
  }
  return stream;
}

std::vector<BpttBatch> make_bptt_batches(const TokenIds& ids, std::size_t batch_size,
                                         std::size_t bptt_len) {
  if (batch_size == 0 || bptt_len == 0) throw CorpusError("bptt: batch_size and bptt_len must be positive");
  if (ids.size() <= batch_size * (bptt_len + 1)) {
    throw CorpusError("bptt: stream of " + std::to_string(ids.size()) + " tokens is too short for " +
                      std::to_string(batch_size) + " columns of window " + std::to_string(bptt_len));
  }
  const std::size_t column = ids.size() / batch_size;
  std::vector<BpttBatch> batches;
  for (std::size_t start = 0; start + 1 < column;) {
    const std::size_t len = std::min(bptt_len, column - 1 - start);
    if (len < bptt_len && len < 2) break;
    BpttBatch batch;
    batch.batch_size = batch_size;
    batch.length = len;
    batch.inputs.resize(batch_size * len);
    batch.targets.resize(batch_size * len);
    for (std::size_t b = 0; b < batch_size; ++b) {
      for (std::size_t t = 0; t < len; ++t) {
        batch.inputs[b * len + t] = ids[b * column + start + t];
        batch.targets[b * len + t] = ids[b * column + start + t + 1];
      }
    }
    batches.push_back(std::move(batch));
    start += len;
  }
  return batches;
}

}  // namespace cgan
