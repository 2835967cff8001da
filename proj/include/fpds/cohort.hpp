// Copyright 2026 The fpds authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpds/common.hpp"

namespace fpds {

// ---------------------------------------------------------------------------
// Longitudinal clinical data and the 7-way image stratification.
//
// Each image (not each subject) is assigned one of seven strata from the
// diagnosis at the imaging visit plus the subject's full diagnostic history:
//
//   sNC   NC at visit, NC at every visit
//   uNC   NC at visit, reaches MCI later, never DAT
//   pNC   NC at visit, reaches DAT later
//   sMCI  MCI at visit, never DAT
//   pMCI  MCI at visit, reaches DAT later
//   eDAT  DAT at visit, with an earlier NC or MCI visit
//   sDAT  DAT at every visit
//
// The first three strata are on the DAT- trajectory, the last four on DAT+.

enum class Diagnosis { NC = 0, MCI = 1, DAT = 2 };

enum class StratumLabel { sNC, uNC, sMCI, pNC, pMCI, eDAT, sDAT };

enum class Trajectory { DATminus, DATplus };

inline const char* to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::NC: return "NC";
        case Diagnosis::MCI: return "MCI";
        case Diagnosis::DAT: return "DAT";
    }
    return "?";
}

inline const char* to_string(StratumLabel s) {
    switch (s) {
        case StratumLabel::sNC: return "sNC";
        case StratumLabel::uNC: return "uNC";
        case StratumLabel::sMCI: return "sMCI";
        case StratumLabel::pNC: return "pNC";
        case StratumLabel::pMCI: return "pMCI";
        case StratumLabel::eDAT: return "eDAT";
        case StratumLabel::sDAT: return "sDAT";
    }
    return "?";
}

inline const char* to_string(Trajectory t) {
    return t == Trajectory::DATplus ? "DAT+" : "DAT-";
}

inline Diagnosis parse_diagnosis(const std::string& token) {
    if (token == "NC") return Diagnosis::NC;
    if (token == "MCI") return Diagnosis::MCI;
    if (token == "DAT") return Diagnosis::DAT;
    throw DataError("unknown diagnosis: '" + token + "'");
}

inline StratumLabel parse_stratum(const std::string& token) {
    for (StratumLabel s : {StratumLabel::sNC, StratumLabel::uNC, StratumLabel::sMCI,
                           StratumLabel::pNC, StratumLabel::pMCI, StratumLabel::eDAT,
                           StratumLabel::sDAT})
        if (token == to_string(s)) return s;
    throw DataError("unknown stratum: '" + token + "'");
}

struct Visit {
    double visit_months = 0.0;  // since the subject's first visit
    Diagnosis diagnosis = Diagnosis::NC;
    bool has_image = false;
    std::optional<double> age_years;
    std::optional<double> mmse;
    std::optional<double> csf_ttau_abeta;
    std::string image_path;  // relative to the cohort CSV's directory
};

struct LongitudinalRecord {
    std::string subject_id;
    std::vector<Visit> visits;  // strictly ascending visit_months
};

// ---------------------------------------------------------------------------

inline constexpr const char* kCohortHeader[] = {
    "subject_id", "visit_months", "diagnosis", "has_image",
    "age_years",  "mmse",         "csf_ttau_abeta", "image_path"};

/// Parses the cohort CSV (see kCohortHeader). One record per subject, visits
/// sorted by time. Malformed rows, duplicate (subject, time) pairs and unknown
/// diagnosis tokens are reported with their line number.
inline std::vector<LongitudinalRecord> load_cohort(const std::string& path) {
    CsvTable t = read_csv(path);
    require_header(t, std::vector<std::string>(std::begin(kCohortHeader), std::end(kCohortHeader)),
                   path);

    std::vector<LongitudinalRecord> records;
    std::map<std::string, size_t> index_of;  // subject_id -> records index

    for (size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = path + ":" + std::to_string(t.line_numbers[r]);
        if (row.size() != 8) throw DataError(where + ": expected 8 fields, got " +
                                             std::to_string(row.size()));
        if (row[0].empty()) throw DataError(where + ": empty subject_id");

        Visit v;
        try {
            v.visit_months = parse_double(row[1], "visit_months");
            v.diagnosis = parse_diagnosis(row[2]);
            if (row[3] == "1") v.has_image = true;
            else if (row[3] == "0") v.has_image = false;
            else throw DataError("has_image must be 0 or 1, got '" + row[3] + "'");
            if (!row[4].empty()) v.age_years = parse_double(row[4], "age_years");
            if (!row[5].empty()) v.mmse = parse_double(row[5], "mmse");
            if (!row[6].empty()) v.csf_ttau_abeta = parse_double(row[6], "csf_ttau_abeta");
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
        if (v.visit_months < 0) throw DataError(where + ": negative visit_months");
        if (v.mmse && (*v.mmse < 0 || *v.mmse > 30))
            throw DataError(where + ": mmse out of [0,30]");
        if (v.csf_ttau_abeta && *v.csf_ttau_abeta <= 0)
            throw DataError(where + ": csf_ttau_abeta must be > 0");
        v.image_path = row[7];
        if (v.has_image && v.image_path.empty())
            throw DataError(where + ": has_image=1 but image_path is blank");

        auto [it, inserted] = index_of.try_emplace(row[0], records.size());
        if (inserted) records.push_back(LongitudinalRecord{row[0], {}});
        auto& rec = records[it->second];
        for (const Visit& prev : rec.visits)
            if (prev.visit_months == v.visit_months)
                throw DataError(where + ": duplicate visit at " + format_double(v.visit_months) +
                                " months for subject " + row[0]);
        rec.visits.push_back(std::move(v));
    }

    for (auto& rec : records)
        std::sort(rec.visits.begin(), rec.visits.end(),
                  [](const Visit& a, const Visit& b) { return a.visit_months < b.visit_months; });
    return records;
}

/// Throws DataError for any diagnosis sequence that improves over time
/// (e.g. DAT followed by NC). The stratification is defined only for
/// monotone NC -> MCI -> DAT progressions.
inline void require_monotone(const LongitudinalRecord& rec) {
    for (size_t i = 1; i < rec.visits.size(); ++i)
        if (static_cast<int>(rec.visits[i].diagnosis) < static_cast<int>(rec.visits[i - 1].diagnosis))
            throw DataError("non-monotone trajectory for subject " + rec.subject_id + " (" +
                            to_string(rec.visits[i - 1].diagnosis) + " at " +
                            format_double(rec.visits[i - 1].visit_months) + "m followed by " +
                            to_string(rec.visits[i].diagnosis) + " at " +
                            format_double(rec.visits[i].visit_months) + "m)");
}

/// Stratum of the image taken at visits[image_visit_index].
inline StratumLabel assign_stratum(const LongitudinalRecord& rec, size_t image_visit_index) {
    if (image_visit_index >= rec.visits.size())
        throw DataError("image visit index out of range for subject " + rec.subject_id);
    require_monotone(rec);

    bool any_dat = false, any_mci = false, all_dat = true;
    for (const Visit& v : rec.visits) {
        any_dat |= v.diagnosis == Diagnosis::DAT;
        any_mci |= v.diagnosis == Diagnosis::MCI;
        all_dat &= v.diagnosis == Diagnosis::DAT;
    }

    switch (rec.visits[image_visit_index].diagnosis) {
        case Diagnosis::NC:
            if (any_dat) return StratumLabel::pNC;
            if (any_mci) return StratumLabel::uNC;
            return StratumLabel::sNC;
        case Diagnosis::MCI:
            return any_dat ? StratumLabel::pMCI : StratumLabel::sMCI;
        case Diagnosis::DAT:
            return all_dat ? StratumLabel::sDAT : StratumLabel::eDAT;
    }
    throw DataError("unreachable diagnosis state");
}

inline Trajectory trajectory_of(StratumLabel s) {
    switch (s) {
        case StratumLabel::pNC:
        case StratumLabel::pMCI:
        case StratumLabel::eDAT:
        case StratumLabel::sDAT:
            return Trajectory::DATplus;
        default:
            return Trajectory::DATminus;
    }
}

/// Years from the image visit to the subject's first DAT diagnosis; nullopt if
/// the subject never reaches DAT, zero if the image visit is at or after it.
inline std::optional<double> time_to_conversion(const LongitudinalRecord& rec,
                                                size_t image_visit_index) {
    if (image_visit_index >= rec.visits.size())
        throw DataError("image visit index out of range for subject " + rec.subject_id);
    for (const Visit& v : rec.visits)
        if (v.diagnosis == Diagnosis::DAT) {
            double years = (v.visit_months - rec.visits[image_visit_index].visit_months) / 12.0;
            return std::max(0.0, years);
        }
    return std::nullopt;
}

}  // namespace fpds
