#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "unite/data/vocabulary.hpp"

namespace unite::data {

/// Width of the hashed zip one-hot inside the demographics vector.
inline constexpr std::size_t kZipBuckets = 64;
/// age, gender F, gender M, zip buckets.
inline constexpr std::size_t kDemographicsDim = 3 + kZipBuckets;

/// A patient's tokenized code history. tokens has exactly max_len entries;
/// positions at or beyond length are padding.
struct MedicalCodeSequence {
  std::string patient_id;
  std::vector<std::size_t> tokens;
  std::size_t length = 0;
  int label = 0;
};

struct DemographicRecord {
  double age = 0.0;
  std::string gender;
  std::string zip;
};

struct TabularFeatures {
  std::string patient_id;
  DemographicRecord record;
  std::vector<double> demographics;
  std::vector<double> location;
};

enum class Split { train, validation, test };

const char* split_name(Split s);

struct Cohort {
  Vocabulary vocab;
  std::size_t max_len = 0;
  std::vector<MedicalCodeSequence> sequences;
  std::vector<TabularFeatures> features;
  std::vector<Split> splits;
  std::vector<std::string> location_feature_names;
  /// zip -> location statistics, as loaded (before imputation).
  std::map<std::string, std::vector<double>> location_table;
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return sequences.size(); }
  std::vector<std::size_t> indices(Split s) const;
  double positive_rate() const;
  double positive_rate(const std::vector<std::size_t>& idx) const;
};

/// age, one-hot gender {F, M}, hashed one-hot zip.
std::vector<double> encode_demographics(const DemographicRecord& record);
std::size_t zip_bucket(const std::string& zip);

}  // namespace unite::data
