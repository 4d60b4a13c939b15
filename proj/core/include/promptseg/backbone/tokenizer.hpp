#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace promptseg::backbone {

// Lower-cases, collapses whitespace and splits into word / digit / punctuation
// pieces. Bytes >= 0x80 are treated as letters so UTF-8 words stay intact.
std::vector<std::string> pre_tokenize(std::string_view text);

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  // Content token ids, without start/end delimiters.
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual int start_token() const = 0;
  virtual int end_token() const = 0;
};

// Vocabulary-free tokenizer for stand-in backbones: each piece hashes into
// [0, vocab - 2); the two top ids are the delimiters.
class HashTokenizer final : public Tokenizer {
 public:
  explicit HashTokenizer(int vocab_size);
  std::vector<int> encode(std::string_view text) const override;
  int start_token() const override { return vocab_size_ - 2; }
  int end_token() const override { return vocab_size_ - 1; }

 private:
  int vocab_size_;
};

// Byte-level BPE over a merges file in the usual "#version" + "left right"
// line format. Vocabulary is the 256 byte symbols, their end-of-word forms,
// one symbol per merge, then the start/end delimiters.
class BpeTokenizer final : public Tokenizer {
 public:
  // max_merges < 0 reads all merges in the file.
  static BpeTokenizer from_file(const std::filesystem::path& merges, int max_merges = -1);
  explicit BpeTokenizer(const std::vector<std::pair<std::string, std::string>>& merges);

  std::vector<int> encode(std::string_view text) const override;
  int start_token() const override { return start_; }
  int end_token() const override { return end_; }
  int vocab_size() const { return end_ + 1; }

 private:
  std::vector<std::string> bpe(const std::string& word) const;

  std::unordered_map<std::string, int> encoder_;
  std::map<std::pair<std::string, std::string>, int> ranks_;
  std::vector<std::string> byte_symbols_;
  int start_ = 0;
  int end_ = 0;
};

struct TokenizedText {
  std::vector<int> ids;  // padded with zeros to the context length
  int end_position = 0;  // index of the end delimiter
  bool truncated = false;
};

// Wraps content tokens with delimiters and truncates to the context window.
TokenizedText tokenize_for_context(const Tokenizer& tokenizer, std::string_view text, int context_length);

}  // namespace promptseg::backbone
