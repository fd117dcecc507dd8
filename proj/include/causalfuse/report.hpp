#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "causalfuse/design.hpp"
#include "causalfuse/fusion.hpp"
#include "causalfuse/sim.hpp"

namespace causalfuse {

inline constexpr const char* kArtifactVersion = "0.1.0";

// FNV-1a over the canonical (sorted-key) serialization of the config block;
// reports embed it so a re-run from the embedded config is checkable.
std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t h);

// Shortest round-trip decimal form; "nan"/"inf"/"-inf" for non-finite.
std::string format_double(double v);

std::string misspecification_name(Misspecification m);
std::string scheme_name(BootstrapScheme s);
std::string regime_name(WeightRegime r);

// nlohmann ADL hooks; plain json objects keep keys sorted, so dumps are
// byte-stable for identical values.
void to_json(nlohmann::json& j, const FusionDiagnostics& d);
void to_json(nlohmann::json& j, const FusionResult& r);
void to_json(nlohmann::json& j, const MenuEntry& e);
void to_json(nlohmann::json& j, const SimConfig& c);
void to_json(nlohmann::json& j, const EstimatorSummary& s);
void to_json(nlohmann::json& j, const SimReport& r);
void to_json(nlohmann::json& j, const AllocationProblem& p);
void to_json(nlohmann::json& j, const Allocation& a);

// Stamps version and config_hash (over body["config"]) and returns the
// indented dump with a trailing newline.
std::string finalize_report(nlohmann::json body);

std::string sim_report_json(const SimReport& r);
// One row per estimator x variance source, for external plotting.
std::string sim_report_csv(const SimReport& r);
std::string sensitivity_csv(const std::vector<SensitivityPoint>& pts);

}  // namespace causalfuse
