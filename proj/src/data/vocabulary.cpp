#include "unite/data/vocabulary.hpp"

#include <algorithm>
#include <set>

#include "unite/data/text_io.hpp"
#include "unite/error.hpp"

namespace unite::data {

Vocabulary Vocabulary::from_codes(std::span<const std::string> codes) {
  std::set<std::string> unique(codes.begin(), codes.end());
  Vocabulary v;
  for (const std::string& c : unique) v.add(c);
  return v;
}

std::size_t Vocabulary::add(const std::string& code) {
  if (auto it = ids_.find(code); it != ids_.end()) return it->second;
  const std::size_t id = kFirstCodeId + codes_.size();
  ids_.emplace(code, id);
  codes_.push_back(code);
  return id;
}

std::size_t Vocabulary::id_of(const std::string& code) const {
  auto it = ids_.find(code);
  return it == ids_.end() ? kUnknownId : it->second;
}

const std::string& Vocabulary::code_of(std::size_t id) const {
  if (id < kFirstCodeId || id >= size()) throw DataError("token id " + std::to_string(id) + " has no code");
  return codes_[id - kFirstCodeId];
}

Vocabulary Vocabulary::load_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "code,id") throw DataError(path.string() + ":1: expected header 'code,id'");
  std::vector<std::pair<std::size_t, std::string>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 2 || f[0].empty()) throw DataError(where + ": expected 'code,id'");
    const long long id = parse_integer(f[1], where);
    if (id < static_cast<long long>(kFirstCodeId)) throw DataError(where + ": id collides with reserved ids");
    rows.emplace_back(static_cast<std::size_t>(id), f[0]);
  }
  std::sort(rows.begin(), rows.end());
  Vocabulary v;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].first != kFirstCodeId + k) throw DataError(path.string() + ": ids are not contiguous from 2");
    if (v.contains(rows[k].second)) throw DataError(path.string() + ": duplicate code '" + rows[k].second + "'");
    v.add(rows[k].second);
  }
  return v;
}

void Vocabulary::write_csv(const std::filesystem::path& path) const {
  std::string out = "code,id\n";
  for (std::size_t k = 0; k < codes_.size(); ++k) out += codes_[k] + "," + std::to_string(kFirstCodeId + k) + "\n";
  write_text(path, out);
}

std::size_t content_length(std::size_t n_codes, std::size_t max_len) { return std::min(n_codes, max_len); }

std::vector<std::size_t> tokenize(std::span<const std::string> raw_codes, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len == 0) throw ContractError("tokenize: max_len must be at least 1");
  if (raw_codes.empty()) throw DataError("empty code sequence");
  const std::size_t keep = content_length(raw_codes.size(), max_len);
  std::vector<std::size_t> ids(max_len, kPadId);
  const std::size_t first = raw_codes.size() - keep;
  for (std::size_t i = 0; i < keep; ++i) ids[i] = vocab.id_of(raw_codes[first + i]);
  return ids;
}

}  // namespace unite::data
