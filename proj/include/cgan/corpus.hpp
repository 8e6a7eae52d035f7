#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cgan {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid UTF-8 input; offset is the first bad byte.
class Utf8Error : public CorpusError {
 public:
  Utf8Error(std::size_t offset, const std::string& what)
      : CorpusError(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr std::string_view kUpperMarker = "<maj>";
inline constexpr std::string_view kNewline = "<nl>";

/// Word-level tokenizer. Words are lowercased, with kUpperMarker emitted
/// before any word that began with an uppercase letter. Each punctuation
/// character is its own token; a line break becomes kNewline. Apostrophes
/// between letters stay inside the word ("don't").
std::vector<std::string> tokenize(std::string_view text);

using TokenIds = std::vector<int>;

class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary();

  /// Most frequent first, ties by first occurrence. max_size counts the
  /// special tokens.
  static Vocabulary build(const std::vector<std::string>& tokens, int min_freq = 2,
                          std::size_t max_size = 30000);

  std::size_t size() const { return id_to_token_.size(); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;

  TokenIds encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const TokenIds& ids) const;
  /// Joins decoded tokens with spaces and restores case and line breaks.
  std::string detokenize(const TokenIds& ids) const;

  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

using Document = TokenIds;

struct SplitCorpus {
  std::vector<Document> train;
  std::vector<Document> valid;
  std::vector<Document> test;
  std::uint64_t split_seed = 0;
};

/// Seeded shuffle, then floor(10%) test, floor(10%) valid, rest train.
template <typename Doc>
struct Split {
  std::vector<Doc> train, valid, test;
};

template <typename Doc>
Split<Doc> split_documents(std::vector<Doc> docs, std::uint64_t seed);

SplitCorpus split_corpus(std::vector<Document> docs, std::uint64_t seed);

/// Splits raw text at blank lines; lines inside a document keep their
/// line breaks. Trailing whitespace lines are dropped.
std::vector<std::string> split_documents_text(std::string_view text);
std::string read_text_file(const std::filesystem::path& path);
/// Document texts from one or more ingest files, in file order.
std::vector<std::string> ingest_files(const std::vector<std::filesystem::path>& paths);
void write_documents(const std::filesystem::path& path, const std::vector<std::string>& docs);

/// [bos, doc..., eos] for every document, concatenated.
TokenIds to_stream(const std::vector<Document>& docs);

struct BpttBatch {
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::vector<int> inputs;   // [batch_size x length], row-major
  std::vector<int> targets;  // same shape; the next stream token

  int input(std::size_t b, std::size_t t) const { return inputs[b * length + t]; }
  int target(std::size_t b, std::size_t t) const { return targets[b * length + t]; }
};

/// Cuts the stream into batch_size contiguous columns and walks them in
/// windows of bptt_len, so a hidden state can carry from one batch to the
/// next. A trailing window shorter than bptt_len is kept if it holds >= 2
/// positions.
std::vector<BpttBatch> make_bptt_batches(const TokenIds& ids, std::size_t batch_size,
                                         std::size_t bptt_len);

}  // namespace cgan
