#include "unite/data/io.hpp"

#include <map>
#include <set>

#include "json.hpp"
#include "unite/data/text_io.hpp"
#include "unite/error.hpp"

namespace unite::data {

namespace {

using nlohmann::json;

struct EhrRow {
  std::string patient_id;
  std::vector<std::string> codes;
  int label = 0;
  std::string zip;
};

std::vector<EhrRow> read_ehr(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<EhrRow> rows;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    json obj;
    try {
      obj = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    EhrRow row;
    try {
      row.patient_id = obj.at("patient_id").get<std::string>();
      row.codes = obj.at("codes").get<std::vector<std::string>>();
      row.label = obj.at("label").get<int>();
      row.zip = obj.at("zip").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(where + ": malformed record (" + e.what() + ")");
    }
    if (row.label != 0 && row.label != 1) throw DataError(where + ": label must be 0 or 1");
    if (row.codes.empty()) throw DataError(where + ": empty code sequence");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + ": EHR file contains no patients");
  return rows;
}

std::map<std::string, DemographicRecord> read_demographics(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "patient_id,age,gender,zip") {
    throw DataError(path.string() + ":1: expected header 'patient_id,age,gender,zip'");
  }
  std::map<std::string, DemographicRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 4 || f[0].empty()) throw DataError(where + ": expected 4 fields");
    DemographicRecord r{parse_double(f[1], where), f[2], f[3]};
    if (!out.emplace(f[0], std::move(r)).second) throw DataError(where + ": duplicate patient_id '" + f[0] + "'");
  }
  return out;
}

void read_location(const std::filesystem::path& path, Cohort& cohort) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ":1: missing header");
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 2 || header[0] != "zip") throw DataError(path.string() + ":1: expected header 'zip,<features...>'");
  cohort.location_feature_names.assign(header.begin() + 1, header.end());
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto f = split_csv_line(lines[i]);
    if (f.size() != header.size() || f[0].empty()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields");
    }
    std::vector<double> values;
    for (std::size_t k = 1; k < f.size(); ++k) values.push_back(parse_double(f[k], where));
    if (!cohort.location_table.emplace(f[0], std::move(values)).second) {
      throw DataError(where + ": duplicate zip '" + f[0] + "'");
    }
  }
}

}  // namespace

CohortPaths CohortPaths::in_directory(const std::filesystem::path& dir) {
  return {dir / "ehr.jsonl", dir / "demographics.csv", dir / "location.csv", dir / "vocab.csv"};
}

Cohort load_cohort(const CohortPaths& paths, std::size_t max_len) {
  const std::vector<EhrRow> ehr = read_ehr(paths.ehr);
  const auto demographics = read_demographics(paths.demographics);
  Cohort cohort;
  cohort.max_len = max_len;
  read_location(paths.location, cohort);

  if (paths.vocabulary) {
    cohort.vocab = Vocabulary::load_csv(*paths.vocabulary);
  } else {
    std::vector<std::string> all;
    for (const EhrRow& r : ehr) all.insert(all.end(), r.codes.begin(), r.codes.end());
    cohort.vocab = Vocabulary::from_codes(all);
  }

  const std::size_t n_loc = cohort.location_feature_names.size();
  std::vector<double> mean_location(n_loc, 0.0);
  for (const auto& [zip, values] : cohort.location_table)
    for (std::size_t k = 0; k < n_loc; ++k) mean_location[k] += values[k];
  if (!cohort.location_table.empty()) {
    for (double& v : mean_location) v /= static_cast<double>(cohort.location_table.size());
  }

  std::set<std::string> seen;
  for (const EhrRow& row : ehr) {
    if (!seen.insert(row.patient_id).second) {
      throw DataError(paths.ehr.string() + ": duplicate patient_id '" + row.patient_id + "'");
    }
    auto demo = demographics.find(row.patient_id);
    if (demo == demographics.end()) {
      throw DataError(paths.demographics.string() + ": no row for patient '" + row.patient_id + "'");
    }
    if (demo->second.zip != row.zip) {
      throw DataError("patient '" + row.patient_id + "': zip differs between EHR and demographics files");
    }
    MedicalCodeSequence seq;
    seq.patient_id = row.patient_id;
    seq.tokens = tokenize(row.codes, cohort.vocab, max_len);
    seq.length = content_length(row.codes.size(), max_len);
    seq.label = row.label;

    TabularFeatures tab;
    tab.patient_id = row.patient_id;
    tab.record = demo->second;
    tab.demographics = encode_demographics(tab.record);
    if (auto loc = cohort.location_table.find(row.zip); loc != cohort.location_table.end()) {
      tab.location = loc->second;
    } else {
      tab.location = mean_location;
      cohort.warnings.push_back("patient '" + row.patient_id + "': zip '" + row.zip +
                                "' has no location row; using column means");
    }
    cohort.sequences.push_back(std::move(seq));
    cohort.features.push_back(std::move(tab));
  }
  cohort.splits.assign(cohort.size(), Split::train);
  return cohort;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
  const CohortPaths paths = CohortPaths::in_directory(dir);
  std::string ehr;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const MedicalCodeSequence& s = cohort.sequences[i];
    std::vector<std::string> codes;
    for (std::size_t t = 0; t < s.length; ++t) {
      codes.push_back(s.tokens[t] == kUnknownId ? std::string("<unk>") : cohort.vocab.code_of(s.tokens[t]));
    }
    json obj = {{"patient_id", s.patient_id}, {"codes", codes}, {"label", s.label}, {"zip", cohort.features[i].record.zip}};
    ehr += obj.dump() + "\n";
  }
  write_text(paths.ehr, ehr);

  std::string demo = "patient_id,age,gender,zip\n";
  for (const TabularFeatures& f : cohort.features) {
    demo += f.patient_id + "," + format_double(f.record.age) + "," + f.record.gender + "," + f.record.zip + "\n";
  }
  write_text(paths.demographics, demo);

  std::string loc = "zip";
  for (const std::string& name : cohort.location_feature_names) loc += "," + name;
  loc += "\n";
  for (const auto& [zip, values] : cohort.location_table) {
    loc += zip;
    for (double v : values) loc += "," + format_double(v);
    loc += "\n";
  }
  write_text(paths.location, loc);
  cohort.vocab.write_csv(*paths.vocabulary);
}

}  // namespace unite::data
