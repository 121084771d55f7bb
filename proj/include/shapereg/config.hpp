#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "shapereg/bench.hpp"
#include "shapereg/coefficients.hpp"
#include "shapereg/geodesic.hpp"
#include "shapereg/regression.hpp"

namespace shapereg {

using Json = nlohmann::json;

struct CoefficientProfile {
    std::string name;
    MetricCoefficients coeffs;
    std::string note;
};

// Built-in profiles, default first.
const std::vector<CoefficientProfile>& coefficient_profiles();
// Throws InputError for unknown names.
const CoefficientProfile& find_profile(const std::string& name);

// Everything a command needs besides its own flags.
struct RunConfig {
    std::string profile = MetricCoefficients::kDefaultProfile;  // "custom" once coefficients are edited
    MetricCoefficients metric;
    SolverConfig solver;
    OptimizerConfig optimizer;
    GridConfig grid;
    DecisionThresholds thresholds;
    std::uint64_t seed = 0;
    int workers = 0;  // 0 picks the OpenMP default
    std::string out_dir = ".";

    void validate() const;
};

void to_json(Json& j, const MetricCoefficients& c);
void to_json(Json& j, const SolverConfig& s);
void to_json(Json& j, const OptimizerConfig& o);
void to_json(Json& j, const GridConfig& g);
void to_json(Json& j, const DecisionThresholds& t);
void to_json(Json& j, const RunConfig& r);

// Every section and key is optional; missing ones keep their defaults.
// Unknown keys and wrong types raise InputError so typos cannot silently
// fall back to defaults. When "profile" names a built-in profile, its
// coefficients are the base that "metric" overrides.
RunConfig run_config_from_json(const Json& j);

// Accepts a plain run config or a manifest holding one under "config".
RunConfig load_run_config(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

// FNV-1a 64 over the canonical dump, as 16 hex digits.
std::string config_hash(const Json& j);

Json fit_result_json(const FitResult& fit);
Json diagnostics_json(const Diagnostics& d);

// Build and host description recorded in manifests.
std::string build_version();
std::string hardware_note();

} // namespace shapereg
