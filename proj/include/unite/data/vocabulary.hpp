#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace unite::data {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnknownId = 1;
inline constexpr std::size_t kFirstCodeId = 2;

/// Code string <-> token id. Ids 0 and 1 are reserved for padding and
/// unknown codes; real codes occupy 2, 3, ... contiguously.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Sorted unique codes, ids assigned in sorted order.
  static Vocabulary from_codes(std::span<const std::string> codes);
  static Vocabulary load_csv(const std::filesystem::path& path);
  void write_csv(const std::filesystem::path& path) const;

  std::size_t add(const std::string& code);
  std::size_t id_of(const std::string& code) const;
  const std::string& code_of(std::size_t id) const;
  bool contains(const std::string& code) const { return ids_.contains(code); }

  /// Total id space, reserved ids included.
  std::size_t size() const noexcept { return kFirstCodeId + codes_.size(); }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::map<std::string, std::size_t> ids_;
  std::vector<std::string> codes_;
};

/// Maps codes to ids (unknown -> 1), keeps the most recent max_len codes and
/// right-pads with 0 to exactly max_len. Throws DataError on empty input.
std::vector<std::size_t> tokenize(std::span<const std::string> raw_codes, const Vocabulary& vocab, std::size_t max_len);

/// Number of content (non-padding) positions tokenize produces.
std::size_t content_length(std::size_t n_codes, std::size_t max_len);

}  // namespace unite::data
