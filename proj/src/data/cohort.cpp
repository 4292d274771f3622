#include "unite/data/cohort.hpp"

#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::data {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<std::size_t> Cohort::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

double Cohort::positive_rate() const {
  if (sequences.empty()) return 0.0;
  double pos = 0.0;
  for (const auto& s : sequences) pos += s.label;
  return pos / static_cast<double>(sequences.size());
}

double Cohort::positive_rate(const std::vector<std::size_t>& idx) const {
  if (idx.empty()) return 0.0;
  double pos = 0.0;
  for (std::size_t i : idx) pos += sequences.at(i).label;
  return pos / static_cast<double>(idx.size());
}

std::size_t zip_bucket(const std::string& zip) { return hash_string(zip) % kZipBuckets; }

std::vector<double> encode_demographics(const DemographicRecord& record) {
  std::vector<double> v(kDemographicsDim, 0.0);
  v[0] = record.age;
  if (record.gender == "F") v[1] = 1.0;
  if (record.gender == "M") v[2] = 1.0;
  v[3 + zip_bucket(record.zip)] = 1.0;
  return v;
}

}  // namespace unite::data
