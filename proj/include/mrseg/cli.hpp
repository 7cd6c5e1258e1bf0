#pragma once

#include <exception>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mrseg/infer.hpp"
#include "mrseg/pipeline.hpp"

namespace mrseg::cli {

/// 2 for configuration errors, 3 for missing or unreadable inputs, 4 for
/// numerical failures, 1 otherwise.
int exit_code(const std::exception& e);

int run(int argc, char** argv, std::ostream& out, std::ostream& err);

/// Prepared-data layout: manifest.csv, fine/{ct,labels}/<id>.nii and
/// coarse/{ct,labels}/<id>.nii.
std::vector<CaseData> load_prepared(const std::filesystem::path& dir, const std::string& split, bool need_labels = true);

/// Probability-map layout: <id>.high.c<k>.nii and <id>.low.c<k>.nii.
void write_maps(const ProbabilityMaps& maps, const std::filesystem::path& dir, const std::string& id,
                const std::string& level);
ProbabilityMaps read_maps(const std::filesystem::path& dir, const std::string& id, const std::string& level);
std::vector<std::string> map_ids(const std::filesystem::path& dir);

}  // namespace mrseg::cli
