#pragma once

// Command-line surface: identify, estimate, simulate, mc.
//
// Exit codes: 0 success, 1 input error, 2 method error, 3 internal error.
// Structured outputs are JSON and carry "format_version" plus the resolved
// configuration under "config". Execution settings (worker count, output
// path, verbosity) are not part of the echo, so they never change a result.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "catsel/dgp.hpp"
#include "catsel/errors.hpp"
#include "catsel/estimate.hpp"
#include "catsel/identify.hpp"

namespace catsel::cli {

using json = nlohmann::json;

inline constexpr const char* kFormatVersion = "catsel/1";

enum ExitCode : int { kExitOk = 0, kExitInput = 1, kExitMethod = 2, kExitInternal = 3 };

int exit_code_for(const Error& e) noexcept;

/// argv-style entry point; args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// JSON conversions, exposed for tests and embedding.

/// {"q", "p_sel": [p0, p1], "p_joint": [[p10, p11], ...]}. Throws InvalidInput.
ObservedSelectionTable table_from_json(const json& j);
/// Same schema with m >= 2 instrument values per row.
InstrumentedTable instrumented_table_from_json(const json& j);
json table_to_json(const ObservedSelectionTable& t);
json identification_to_json(const Identification& id);
json overidentification_to_json(const OveridentificationReport& rep);

/// "dgp" section: {"preset": "canonical"} and/or explicit q, n,
/// instrument_rate, covariates, params {beta, gamma, delta}. Throws InvalidConfig.
DGPConfig dgp_config_from_json(const json& j, std::uint64_t seed);
json dgp_config_to_json(const DGPConfig& cfg);

/// "estimator" section overlaid on `base`. Throws InvalidConfig on unknown keys.
EstimatorConfig estimator_config_from_json(const json& j, EstimatorConfig base = {});
json estimator_config_to_json(const EstimatorConfig& cfg);

json fit_to_json(const FitResult& fit, int q, std::size_t dx);
json mc_report_to_json(const MCReport& rep);
json feasibility_to_json(const FeasibilityReport& rep);
json error_to_json(const Error& e);

}  // namespace catsel::cli
