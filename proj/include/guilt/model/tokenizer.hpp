#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "guilt/common/text.hpp"

namespace guilt::model {

/// Subword encoding of one story. Position 0 is the start marker and the last
/// position is the end marker; both carry word_index -1.
struct Encoding {
  std::vector<int> ids;
  std::vector<int> word_index;
  std::size_t kept_words = 0;  // words whose subwords all fit within max_length
};

/// Greedy longest-match WordPiece over lowercased word tokens, compatible with
/// uncased BERT vocab.txt files.
class WordPieceTokenizer {
 public:
  WordPieceTokenizer() = default;
  explicit WordPieceTokenizer(std::vector<std::string> vocab);

  static WordPieceTokenizer load(const std::filesystem::path& vocab_txt);
  void save(const std::filesystem::path& vocab_txt) const;

  /// Special markers, then every character and its "##" continuation, then
  /// whole words by descending frequency until `max_size` entries.
  static WordPieceTokenizer build(const std::vector<std::string>& texts, std::size_t max_size,
                                  std::size_t min_count = 2);

  std::vector<int> wordpiece(std::string_view word) const;
  Encoding encode(const std::vector<WordToken>& words, std::size_t max_length) const;
  Encoding encode(std::string_view text, std::size_t max_length) const;

  std::size_t size() const { return vocab_.size(); }
  const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }
  int id_of(std::string_view token) const;
  const std::vector<std::string>& vocab() const { return vocab_; }

  int pad_id() const { return pad_; }
  int unk_id() const { return unk_; }
  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }
  int mask_id() const { return mask_; }
  bool is_special(int id) const { return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  int pad_ = 0, unk_ = 1, cls_ = 2, sep_ = 3, mask_ = 4;
};

}  // namespace guilt::model
