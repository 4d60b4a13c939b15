#include "promptseg/backbone/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>

#include "promptseg/error.hpp"
#include "promptseg/hashing.hpp"

namespace promptseg::backbone {

namespace {

enum class CharClass { Space, Letter, Digit, Other };

CharClass classify(unsigned char c) {
  if (std::isspace(c)) return CharClass::Space;
  if (std::isalpha(c) || c >= 0x80) return CharClass::Letter;
  if (std::isdigit(c)) return CharClass::Digit;
  return CharClass::Other;
}

std::string utf8(int code_point) {
  std::string out;
  if (code_point < 0x80) {
    out += static_cast<char>(code_point);
  } else if (code_point < 0x800) {
    out += static_cast<char>(0xC0 | (code_point >> 6));
    out += static_cast<char>(0x80 | (code_point & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (code_point >> 12));
    out += static_cast<char>(0x80 | ((code_point >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (code_point & 0x3F));
  }
  return out;
}

// Reversible byte -> printable symbol table of byte-level BPE.
std::vector<std::string> byte_to_unicode() {
  std::vector<int> printable;
  for (int b = '!'; b <= '~'; ++b) printable.push_back(b);
  for (int b = 0xA1; b <= 0xAC; ++b) printable.push_back(b);
  for (int b = 0xAE; b <= 0xFF; ++b) printable.push_back(b);
  std::vector<std::string> table(256);
  int extra = 0;
  for (int b = 0; b < 256; ++b) {
    const bool keep = std::find(printable.begin(), printable.end(), b) != printable.end();
    table[static_cast<std::size_t>(b)] = utf8(keep ? b : 256 + extra++);
  }
  return table;
}

}  // namespace

std::vector<std::string> pre_tokenize(std::string_view text) {
  std::vector<std::string> pieces;
  std::string current;
  CharClass current_class = CharClass::Space;
  for (unsigned char raw : text) {
    const auto c = static_cast<unsigned char>(std::tolower(raw));
    const CharClass cls = classify(c);
    // digits are always single pieces; letters and punctuation form runs
    if (cls != current_class || cls == CharClass::Digit) {
      if (!current.empty()) pieces.push_back(std::move(current));
      current.clear();
    }
    if (cls != CharClass::Space) current += static_cast<char>(c);
    current_class = cls;
  }
  if (!current.empty()) pieces.push_back(std::move(current));
  return pieces;
}

HashTokenizer::HashTokenizer(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 3) throw ConfigError("hash tokenizer needs a vocabulary of at least 3");
}

std::vector<int> HashTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : pre_tokenize(text)) {
    Fnv1a h;
    h.update(piece);
    ids.push_back(static_cast<int>(h.digest() % static_cast<std::uint64_t>(vocab_size_ - 2)));
  }
  return ids;
}

BpeTokenizer BpeTokenizer::from_file(const std::filesystem::path& merges_path, int max_merges) {
  std::ifstream in(merges_path);
  if (!in) throw ConfigError("cannot open BPE merges file: " + merges_path.string());
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("#version", 0) == 0) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw FormatError("malformed merge line: " + line);
    merges.emplace_back(line.substr(0, space), line.substr(space + 1));
    if (max_merges >= 0 && static_cast<int>(merges.size()) >= max_merges) break;
  }
  return BpeTokenizer(merges);
}

BpeTokenizer::BpeTokenizer(const std::vector<std::pair<std::string, std::string>>& merges)
    : byte_symbols_(byte_to_unicode()) {
  int next = 0;
  for (const auto& s : byte_symbols_) encoder_.emplace(s, next++);
  for (const auto& s : byte_symbols_) encoder_.emplace(s + "</w>", next++);
  int rank = 0;
  for (const auto& m : merges) {
    ranks_.emplace(m, rank++);
    encoder_.emplace(m.first + m.second, next++);
  }
  start_ = next++;
  end_ = next;
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
  std::vector<std::string> parts;
  for (unsigned char c : word) parts.push_back(byte_symbols_[c]);
  if (parts.empty()) return parts;
  parts.back() += "</w>";
  while (parts.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto it = ranks_.find({parts[i], parts[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::string left = parts[best], right = parts[best + 1];
    std::vector<std::string> merged;
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
        merged.push_back(left + right);
        i += 2;
      } else {
        merged.push_back(parts[i]);
        ++i;
      }
    }
    parts = std::move(merged);
  }
  return parts;
}

std::vector<int> BpeTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : pre_tokenize(text)) {
    for (const auto& sym : bpe(piece)) {
      auto it = encoder_.find(sym);
      if (it == encoder_.end()) throw FormatError("BPE symbol missing from vocabulary: " + sym);
      ids.push_back(it->second);
    }
  }
  return ids;
}

TokenizedText tokenize_for_context(const Tokenizer& tokenizer, std::string_view text, int context_length) {
  std::vector<int> content = tokenizer.encode(text);
  TokenizedText out;
  const auto room = static_cast<std::size_t>(context_length - 2);
  if (content.size() > room) {
    content.resize(room);
    out.truncated = true;
  }
  out.ids.assign(static_cast<std::size_t>(context_length), 0);
  out.ids[0] = tokenizer.start_token();
  std::copy(content.begin(), content.end(), out.ids.begin() + 1);
  out.end_position = static_cast<int>(content.size()) + 1;
  out.ids[static_cast<std::size_t>(out.end_position)] = tokenizer.end_token();
  return out;
}

}  // namespace promptseg::backbone
