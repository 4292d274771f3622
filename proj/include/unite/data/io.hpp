#pragma once

#include <filesystem>
#include <optional>

#include "unite/data/cohort.hpp"

namespace unite::data {

struct CohortPaths {
  std::filesystem::path ehr;
  std::filesystem::path demographics;
  std::filesystem::path location;
  /// Optional; when absent the vocabulary is built from the EHR codes.
  std::optional<std::filesystem::path> vocabulary;

  /// ehr.jsonl, demographics.csv, location.csv, vocab.csv under dir.
  static CohortPaths in_directory(const std::filesystem::path& dir);
};

/// Joins the three modalities by patient id (EHR file order). Patients whose
/// zip has no location row get the column-mean vector and a warning in
/// Cohort::warnings. Throws DataError on malformed rows (with line number),
/// duplicate ids, missing demographics, or an empty EHR file.
Cohort load_cohort(const CohortPaths& paths, std::size_t max_len);

/// Writes the four files of CohortPaths::in_directory(dir).
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

}  // namespace unite::data
