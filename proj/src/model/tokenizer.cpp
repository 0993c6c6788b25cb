#include "guilt/model/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "guilt/common/error.hpp"
#include "guilt/common/io.hpp"

namespace guilt::model {
namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

// Characters as UTF-8 sequences so multi-byte code points stay whole.
std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
  auto need = [&](const char* name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw SchemaError(std::string("vocabulary lacks ") + name);
    return it->second;
  };
  pad_ = need("[PAD]");
  unk_ = need("[UNK]");
  cls_ = need("[CLS]");
  sep_ = need("[SEP]");
  mask_ = need("[MASK]");
}

WordPieceTokenizer WordPieceTokenizer::load(const std::filesystem::path& vocab_txt) {
  std::ifstream in(vocab_txt);
  if (!in) throw InvalidInput("cannot open vocabulary " + vocab_txt.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return WordPieceTokenizer(std::move(vocab));
}

void WordPieceTokenizer::save(const std::filesystem::path& vocab_txt) const {
  std::string out;
  for (const auto& t : vocab_) {
    out += t;
    out += '\n';
  }
  write_file_atomic(vocab_txt, out);
}

WordPieceTokenizer WordPieceTokenizer::build(const std::vector<std::string>& texts, std::size_t max_size,
                                             std::size_t min_count) {
  std::vector<std::string> vocab = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  std::map<std::string, std::size_t> word_counts;
  std::map<std::string, std::size_t> chars;
  for (const auto& text : texts) {
    for (const auto& w : tokenize_words(text)) {
      const std::string lower = to_lower_ascii(w.surface);
      ++word_counts[lower];
      for (const auto& ch : utf8_chars(lower)) ++chars[ch];
    }
  }
  for (const auto& [ch, _] : chars) vocab.push_back(ch);
  for (const auto& [ch, _] : chars) vocab.push_back("##" + ch);

  std::vector<std::pair<std::string, std::size_t>> words;
  for (const auto& [w, n] : word_counts) {
    if (n >= min_count && utf8_chars(w).size() > 1) words.emplace_back(w, n);
  }
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [w, _] : words) {
    if (vocab.size() >= max_size) break;
    vocab.push_back(w);
  }
  return WordPieceTokenizer(std::move(vocab));
}

int WordPieceTokenizer::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

std::vector<int> WordPieceTokenizer::wordpiece(std::string_view word) const {
  const std::string lower = to_lower_ascii(word);
  const auto chars = utf8_chars(lower);
  if (chars.empty()) return {};
  if (chars.size() > kMaxCharsPerWord) return {unk_};
  std::vector<int> out;
  std::size_t start = 0;
  while (start < chars.size()) {
    std::size_t end = chars.size();
    int found = -1;
    while (start < end) {
      std::string piece = start > 0 ? "##" : "";
      for (std::size_t i = start; i < end; ++i) piece += chars[i];
      auto it = index_.find(piece);
      if (it != index_.end()) {
        found = it->second;
        break;
      }
      --end;
    }
    if (found < 0) return {unk_};
    out.push_back(found);
    start = end;
  }
  return out;
}

Encoding WordPieceTokenizer::encode(const std::vector<WordToken>& words, std::size_t max_length) const {
  if (max_length < 2) throw InvalidInput("max_length must leave room for the two markers");
  Encoding enc;
  enc.ids.push_back(cls_);
  enc.word_index.push_back(-1);
  const std::size_t budget = max_length - 2;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto pieces = wordpiece(words[w].surface);
    if (enc.ids.size() - 1 + pieces.size() > budget) break;
    for (int id : pieces) {
      enc.ids.push_back(id);
      enc.word_index.push_back(static_cast<int>(w));
    }
    enc.kept_words = w + 1;
  }
  enc.ids.push_back(sep_);
  enc.word_index.push_back(-1);
  return enc;
}

Encoding WordPieceTokenizer::encode(std::string_view text, std::size_t max_length) const {
  return encode(tokenize_words(text), max_length);
}

}  // namespace guilt::model
