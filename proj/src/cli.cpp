#include "catsel/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "catsel/dataset.hpp"

namespace catsel::cli {

namespace {

[[noreturn]] void bad_input(const std::string& msg) { throw Error(ErrorCode::InvalidInput, msg); }
[[noreturn]] void bad_config(const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); }

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vector(m.row(i).transpose())));
  return rows;
}

Vector vector_from(const json& j, const std::string& what) {
  if (!j.is_array()) bad_config(what + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) bad_config(what + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

std::vector<Vector> vectors_from(const json& j, const std::string& what) {
  if (!j.is_array()) bad_config(what + " must be an array of arrays");
  std::vector<Vector> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    out.push_back(vector_from(j[k], what + "[" + std::to_string(k) + "]"));
  }
  return out;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) bad_config(section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) bad_config("unknown key '" + key + "' in " + section);
  }
}

double probability_from(const json& j, const std::string& what) {
  if (!j.is_number()) bad_input(what + " must be a number");
  const double p = j.get<double>();
  if (!(p > 0.0 && p < 1.0)) bad_input(what + " must lie strictly between 0 and 1");
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad_input("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_text(const std::string& text, const std::string& what, ErrorCode code) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(code, what + " is not valid JSON: " + e.what());
  }
}

std::string fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) bad_input("cannot write '" + path + "'");
  f << text;
  if (!f) bad_input("failed writing '" + path + "'");
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

int exit_code_for(const Error& e) noexcept {
  return is_input_error(e.code()) ? kExitInput : kExitMethod;
}

// ---------------------------------------------------------------- tables

InstrumentedTable instrumented_table_from_json(const json& j) {
  if (!j.is_object()) bad_input("table must be a JSON object");
  for (const char* key : {"q", "p_sel", "p_joint"}) {
    if (!j.contains(key)) bad_input(std::string("table is missing '") + key + "'");
  }
  if (!j["q"].is_number_integer()) bad_input("q must be an integer");
  InstrumentedTable t;
  t.q = j["q"].get<int>();
  if (t.q < 2) bad_input("q must be at least 2");
  const json& ps = j["p_sel"];
  if (!ps.is_array() || ps.size() < 2) bad_input("p_sel must list at least two probabilities");
  for (std::size_t z = 0; z < ps.size(); ++z) {
    t.p_sel.push_back(probability_from(ps[z], "p_sel[" + std::to_string(z) + "]"));
  }
  const json& pj = j["p_joint"];
  if (!pj.is_array() || pj.size() != static_cast<std::size_t>(t.q - 1)) {
    bad_input("p_joint must have q - 1 rows");
  }
  for (std::size_t k = 0; k < pj.size(); ++k) {
    if (!pj[k].is_array() || pj[k].size() != ps.size()) {
      bad_input("p_joint[" + std::to_string(k) + "] must have one entry per instrument value");
    }
    std::vector<double> row;
    for (std::size_t z = 0; z < ps.size(); ++z) {
      row.push_back(probability_from(
          pj[k][z], "p_joint[" + std::to_string(k) + "][" + std::to_string(z) + "]"));
    }
    t.p_joint.push_back(std::move(row));
  }
  return t;
}

ObservedSelectionTable table_from_json(const json& j) {
  const auto t = instrumented_table_from_json(j);
  if (t.p_sel.size() != 2) bad_input("expected exactly two instrument values");
  std::vector<std::array<Probability, 2>> joint;
  for (const auto& row : t.p_joint) joint.push_back({Probability(row[0]), Probability(row[1])});
  return ObservedSelectionTable(t.q, {Probability(t.p_sel[0]), Probability(t.p_sel[1])},
                                std::move(joint));
}

json table_to_json(const ObservedSelectionTable& t) {
  json pj = json::array();
  for (int k = 1; k < t.q(); ++k) pj.push_back({t.p_joint(k, 0).value(), t.p_joint(k, 1).value()});
  return {{"q", t.q()}, {"p_sel", {t.p_sel(0).value(), t.p_sel(1).value()}}, {"p_joint", pj}};
}

json identification_to_json(const Identification& id) {
  const auto& d = id.diagnostics;
  return {{"pi", id.latent.pi},
          {"mu", id.latent.mu},
          {"lambda", id.latent.lambda},
          {"omega", id.latent.omega},
          {"diagnostics",
           {{"condition", d.condition},
            {"max_condition", d.max_condition},
            {"max_residual", d.max_residual},
            {"warnings", d.warnings}}}};
}

json overidentification_to_json(const OveridentificationReport& rep) {
  json pairs = json::array();
  for (std::size_t i = 0; i < rep.pairs.size(); ++i) {
    json p = identification_to_json(rep.fits[i]);
    p["instrument_values"] = {rep.pairs[i].z_lo, rep.pairs[i].z_hi};
    pairs.push_back(std::move(p));
  }
  return {{"pairs", pairs},
          {"max_mu_discrepancy", rep.max_mu_discrepancy},
          {"max_omega_discrepancy", rep.max_omega_discrepancy},
          {"tolerance", rep.tolerance},
          {"flagged", rep.flagged}};
}

// ---------------------------------------------------------------- configs

DGPConfig dgp_config_from_json(const json& j, std::uint64_t seed) {
  check_keys(j, {"preset", "q", "n", "instrument_rate", "covariates", "params"}, "dgp");
  DGPConfig cfg;
  bool have_params = false;
  if (j.contains("preset")) {
    if (j["preset"] != "canonical") bad_config("unknown dgp preset (only 'canonical' exists)");
    cfg = canonical_config();
    have_params = true;
  }
  try {
    if (j.contains("q")) cfg.q = j["q"].get<int>();
    if (j.contains("n")) cfg.n = j["n"].get<std::size_t>();
    if (j.contains("instrument_rate")) cfg.instrument_rate = j["instrument_rate"].get<double>();
  } catch (const json::exception& e) {
    bad_config(std::string("dgp: ") + e.what());
  }
  if (j.contains("covariates")) {
    const json& cs = j["covariates"];
    if (!cs.is_array()) bad_config("dgp.covariates must be an array");
    cfg.covariates.clear();
    for (const auto& c : cs) {
      check_keys(c, {"kind", "a", "b"}, "dgp.covariates entry");
      if (!c.contains("kind") || !c["kind"].is_string()) bad_config("covariate needs a 'kind'");
      CovariateSpec spec;
      spec.kind = covariate_kind_from_name(c["kind"].get<std::string>());
      if (c.contains("a")) spec.a = c["a"].get<double>();
      if (c.contains("b")) spec.b = c["b"].get<double>();
      cfg.covariates.push_back(spec);
    }
  }
  if (j.contains("params")) {
    const json& p = j["params"];
    check_keys(p, {"beta", "gamma", "delta"}, "dgp.params");
    if (p.contains("beta")) cfg.true_params.beta = vectors_from(p["beta"], "beta");
    if (p.contains("gamma")) cfg.true_params.gamma = vectors_from(p["gamma"], "gamma");
    if (p.contains("delta")) cfg.true_params.delta = vector_from(p["delta"], "delta");
    have_params = true;
  }
  if (!have_params) bad_config("dgp needs 'params' or a 'preset'");
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

json dgp_config_to_json(const DGPConfig& cfg) {
  json covs = json::array();
  for (const auto& c : cfg.covariates) {
    json e = {{"kind", covariate_kind_name(c.kind)}};
    if (c.kind == CovariateKind::Uniform) {
      e["a"] = c.a;
      e["b"] = c.b;
    }
    covs.push_back(e);
  }
  json beta = json::array(), gamma = json::array();
  for (const auto& b : cfg.true_params.beta) beta.push_back(to_json(b));
  for (const auto& g : cfg.true_params.gamma) gamma.push_back(to_json(g));
  return {{"q", cfg.q},
          {"n", cfg.n},
          {"instrument_rate", cfg.instrument_rate},
          {"covariates", covs},
          {"params", {{"beta", beta}, {"gamma", gamma}, {"delta", to_json(cfg.true_params.delta)}}}};
}

EstimatorConfig estimator_config_from_json(const json& j, EstimatorConfig base) {
  check_keys(j,
             {"include_baseline_term", "literal_scores", "max_iter", "tol", "step_cap",
              "hessian_step", "saturation_threshold", "max_condition"},
             "estimator");
  try {
    if (j.contains("include_baseline_term")) base.include_baseline_term = j["include_baseline_term"].get<bool>();
    if (j.contains("literal_scores")) base.literal_scores = j["literal_scores"].get<bool>();
    if (j.contains("max_iter")) base.max_iter = j["max_iter"].get<int>();
    if (j.contains("tol")) base.tol = j["tol"].get<double>();
    if (j.contains("step_cap")) base.step_cap = j["step_cap"].get<double>();
    if (j.contains("hessian_step")) base.hessian_step = j["hessian_step"].get<double>();
    if (j.contains("saturation_threshold")) base.saturation_threshold = j["saturation_threshold"].get<double>();
    if (j.contains("max_condition")) base.max_condition = j["max_condition"].get<double>();
  } catch (const json::exception& e) {
    bad_config(std::string("estimator: ") + e.what());
  }
  if (base.max_iter < 1 || !(base.tol > 0.0) || !(base.hessian_step > 0.0)) {
    bad_config("estimator: max_iter, tol and hessian_step must be positive");
  }
  return base;
}

json estimator_config_to_json(const EstimatorConfig& cfg) {
  return {{"include_baseline_term", cfg.include_baseline_term},
          {"literal_scores", cfg.literal_scores},
          {"max_iter", cfg.max_iter},
          {"tol", cfg.tol},
          {"step_cap", cfg.step_cap},
          {"hessian_step", cfg.hessian_step},
          {"saturation_threshold", cfg.saturation_threshold},
          {"max_condition", cfg.max_condition}};
}

// ---------------------------------------------------------------- results

json fit_to_json(const FitResult& fit, int q, std::size_t dx) {
  const auto labels = theta_labels(q, dx);
  const Vector theta = fit.params.theta();
  json coefs = json::array();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    json c = {{"name", labels[static_cast<std::size_t>(i)]}, {"estimate", theta[i]}};
    if (fit.variance_available) {
      c["std_error"] = fit.std_errors[i];
      c["t"] = theta[i] / fit.std_errors[i];
      c["std_error_influence"] = fit.std_errors_influence[i];
      c["t_influence"] = theta[i] / fit.std_errors_influence[i];
    } else {
      c["std_error"] = nullptr;
      c["t"] = nullptr;
      c["std_error_influence"] = nullptr;
      c["t_influence"] = nullptr;
    }
    coefs.push_back(std::move(c));
  }
  json delta = json::array();
  const auto& fs = fit.first_stage;
  for (Eigen::Index i = 0; i < fs.delta.size(); ++i) {
    const bool is_z = i + 1 == fs.delta.size();
    delta.push_back({{"name", is_z ? std::string("z") : "x" + std::to_string(i + 1)},
                     {"estimate", fs.delta[i]},
                     {"std_error", fs.std_errors[i]},
                     {"t", fs.delta[i] / fs.std_errors[i]}});
  }
  const auto& d = fit.diagnostics;
  json out = {
      {"n", fit.n},
      {"q", q},
      {"dx", dx},
      {"converged", fit.converged},
      {"iterations", fit.iterations},
      {"loglik", fit.loglik},
      {"first_stage",
       {{"coefficients", delta},
        {"loglik", fs.loglik},
        {"iterations", fs.iterations},
        {"gradient_norm", fs.gradient_norm}}},
      {"coefficients", coefs},
      {"variance_available", fit.variance_available},
      {"diagnostics",
       {{"gradient_norm", d.gradient_norm},
        {"cond_a", d.cond_a},
        {"cond_d", d.cond_d},
        {"saturated_rows", d.saturated_rows},
        {"instrument_t", d.instrument_t},
        {"weak_instrument", d.weak_instrument},
        {"gradient_fallbacks", d.gradient_fallbacks},
        {"warnings", d.warnings}}}};
  if (fit.variance_available) {
    out["vtheta"] = to_json(fit.vtheta.dense());
    out["vtheta_influence"] = to_json(fit.vtheta_influence.dense());
  } else {
    out["vtheta"] = nullptr;
    out["vtheta_influence"] = nullptr;
  }
  return out;
}

json mc_report_to_json(const MCReport& rep) {
  json coords = json::array();
  for (std::size_t i = 0; i < rep.labels.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    json c = {{"name", rep.labels[i]},
              {"truth", rep.truth[ii]},
              {"bias", rep.bias[ii]},
              {"rmse", rep.rmse[ii]},
              {"mean_se", rep.mean_se[ii]},
              {"mean_se_influence", rep.mean_se_influence[ii]},
              {"coverage", rep.coverage[ii]},
              {"coverage_influence", rep.coverage_influence[ii]}};
    c["empirical_sd"] = rep.empirical_sd ? json((*rep.empirical_sd)[ii]) : json(nullptr);
    coords.push_back(std::move(c));
  }
  const bool pass_s = MCReport::coverage_ok(rep.coverage);
  const bool pass_i = MCReport::coverage_ok(rep.coverage_influence);
  json passing = json::array();
  if (pass_s) passing.push_back("sandwich");
  if (pass_i) passing.push_back("influence");
  return {{"n", rep.n},
          {"replications", rep.replications},
          {"failures", rep.failures},
          {"failure_rate", rep.failure_rate},
          {"nonconverged", rep.nonconverged},
          {"nonconvergence_rate", rep.nonconvergence_rate},
          {"failure_reasons", rep.failure_reasons},
          {"coordinates", coords},
          {"rmse_total", rep.rmse_total},
          {"median_sup_error", rep.median_sup_error},
          {"summary",
           {{"coverage_band", {0.90, 0.98}},
            {"coverage_pass_sandwich", pass_s},
            {"coverage_pass_influence", pass_i},
            {"passing_variants", passing},
            {"pass", pass_s || pass_i}}}};
}

json feasibility_to_json(const FeasibilityReport& rep) {
  json fails = json::array();
  for (const auto& f : rep.failures) {
    fails.push_back({{"probe", f.probe}, {"category", f.category}, {"s", f.selected}, {"value", f.value}});
  }
  return {{"probes", rep.probes},
          {"feasible", rep.feasible},
          {"rate", rep.rate},
          {"worst_margin", rep.worst_margin},
          {"accepted", rep.accepted},
          {"failures", fails}};
}

json error_to_json(const Error& e) {
  json j = {{"code", std::string(e.name())}, {"message", e.what()}, {"exit_code", exit_code_for(e)}};
  if (e.category()) j["category"] = *e.category();
  if (const auto* o = dynamic_cast<const OutsideAttainableRange*>(&e)) {
    j["attainable_interval"] = {o->lo, o->hi};
    j["target"] = o->target;
  } else if (const auto* p = dynamic_cast<const NotPositiveDefinite*>(&e)) {
    j["pivot"] = p->pivot;
  } else if (const auto* r = dynamic_cast<const NonFiniteLik*>(&e)) {
    j["row"] = r->row;
  } else if (const auto* c = dynamic_cast<const NoConvergence*>(&e)) {
    j["best_iterate"] = c->best_iterate;
    j["gradient_norm"] = c->gradient_norm;
    j["iterations"] = c->iterations;
  }
  return j;
}

// ---------------------------------------------------------------- commands

namespace {

/// Error with extra JSON attached to the error report.
class DetailedError : public Error {
 public:
  DetailedError(const Error& base, json detail) : Error(base), detail(std::move(detail)) {}
  json detail;
};

struct Options {
  std::string command;
  std::string config_path;
  std::string out_path;
  std::string input;  // positional table / data file
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::size_t> probes;
  std::optional<std::size_t> n;
  std::optional<std::size_t> replications;
  std::optional<double> tolerance;
  std::optional<int> q;
  bool include_baseline_term = false;
  bool add_intercept = false;
  int verbose = 0;
};

struct Context {
  Options opt;
  json file;  // config file contents, {} when absent
  std::ostream& out;
  std::ostream& err;

  void log(const std::string& msg) const {
    if (opt.verbose > 0) err << "[catsel] " << msg << "\n";
  }
  unsigned workers() const {
    if (opt.workers) return std::max(1u, *opt.workers);
    if (file.contains("workers")) return std::max(1u, file["workers"].get<unsigned>());
    return 1;
  }
  std::string out_path() const {
    if (!opt.out_path.empty()) return opt.out_path;
    if (file.contains("out")) return file["out"].get<std::string>();
    return {};
  }
  std::uint64_t seed() const {
    if (opt.seed) return *opt.seed;
    if (file.contains("seed")) return file["seed"].get<std::uint64_t>();
    return 42;
  }
  json section(const char* name) const { return file.contains(name) ? file[name] : json::object(); }
  EstimatorConfig estimator() const {
    EstimatorConfig ec = estimator_config_from_json(section("estimator"));
    if (opt.include_baseline_term) ec.include_baseline_term = true;
    ec.workers = workers();
    return ec;
  }
  DGPConfig dgp() const {
    if (!file.contains("dgp")) bad_config("a 'dgp' section is required (see --config)");
    DGPConfig cfg = dgp_config_from_json(file["dgp"], seed());
    if (opt.n) cfg.n = *opt.n;
    cfg.validate();
    return cfg;
  }
  void emit(const json& j) const {
    const std::string path = out_path();
    if (path.empty()) {
      out << dump(j);
    } else {
      write_text(path, dump(j));
    }
  }
};

json envelope(const std::string& command, json config) {
  return {{"format_version", kFormatVersion}, {"command", command}, {"config", std::move(config)}};
}

int cmd_identify(const Context& ctx) {
  std::string path = ctx.opt.input;
  if (path.empty() && ctx.file.contains("table")) path = ctx.file["table"].get<std::string>();
  if (path.empty()) bad_input("identify needs a table file");
  const json table = parse_json_text(read_file(path), "table file", ErrorCode::InvalidInput);
  const auto multi = instrumented_table_from_json(table);

  json cfg = {{"table", table}};
  if (multi.p_sel.size() == 2) {
    ctx.log("identifying q = " + std::to_string(multi.q));
    const auto id = identify_all(table_from_json(table));
    json out = envelope("identify", cfg);
    out.update(identification_to_json(id));
    ctx.emit(out);
    return kExitOk;
  }
  double tol = 1e-6;
  if (ctx.file.contains("tolerance")) tol = ctx.file["tolerance"].get<double>();
  if (ctx.opt.tolerance) tol = *ctx.opt.tolerance;
  cfg["tolerance"] = tol;
  ctx.log("overidentification check over " + std::to_string(multi.p_sel.size()) + " instrument values");
  const auto rep = overidentification_check(pairwise_tables(multi), tol);
  json out = envelope("identify", cfg);
  out["overidentification"] = overidentification_to_json(rep);
  ctx.emit(out);
  return kExitOk;
}

int cmd_estimate(const Context& ctx) {
  const json data_sec = ctx.section("data");
  check_keys(data_sec, {"file", "q", "add_intercept"}, "data");
  std::string path = ctx.opt.input;
  if (path.empty() && data_sec.contains("file")) path = data_sec["file"].get<std::string>();
  if (path.empty()) bad_input("estimate needs a data CSV");
  CsvReadOptions ro;
  if (data_sec.contains("q")) ro.q = data_sec["q"].get<int>();
  if (ctx.opt.q) ro.q = *ctx.opt.q;
  ro.add_intercept = ctx.opt.add_intercept ||
                     (data_sec.contains("add_intercept") && data_sec["add_intercept"].get<bool>());
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  const Dataset data = read_dataset_csv(in, ro);
  const EstimatorConfig ec = ctx.estimator();

  json cfg = {{"data",
               {{"file", std::filesystem::path(path).filename().string()},
                {"rows", data.n()},
                {"fnv1a64", fnv1a64(bytes)},
                {"q", data.q},
                {"add_intercept", ro.add_intercept}}},
              {"estimator", estimator_config_to_json(ec)}};
  ctx.log("fitting n = " + std::to_string(data.n()) + ", q = " + std::to_string(data.q));
  const FitResult fit = estimate_two_step(data, ec);
  json out = envelope("estimate", cfg);
  out.update(fit_to_json(fit, data.q, data.dx()));
  ctx.emit(out);
  if (!fit.converged || !fit.variance_available) {
    ctx.err << "catsel: fit incomplete ("
            << (fit.converged ? "variance unavailable" : "no convergence") << ")\n";
    return kExitMethod;
  }
  return kExitOk;
}

int cmd_simulate(const Context& ctx) {
  const std::string path = ctx.out_path();
  if (path.empty()) bad_config("simulate needs --out for the CSV file");
  const DGPConfig cfg = ctx.dgp();
  std::size_t probes = 10000;
  if (ctx.file.contains("probes")) probes = ctx.file["probes"].get<std::size_t>();
  if (ctx.opt.probes) probes = *ctx.opt.probes;

  ctx.log("probing feasibility with " + std::to_string(probes) + " covariate draws");
  const auto feas = validate_config(cfg, probes);
  if (!feas.accepted) {
    throw DetailedError(
        Error(ErrorCode::InfeasibleDGP, "configuration is feasible at rate " +
                                            std::to_string(feas.rate) + " over probes"),
        {{"feasibility", feasibility_to_json(feas)}});
  }
  const Dataset data = sample_dataset(cfg, ctx.workers());
  std::ostringstream csv;
  write_dataset_csv(csv, data);
  write_text(path, csv.str());

  const auto pop = population_table(cfg);
  json echo = {{"seed", cfg.seed}, {"probes", probes}, {"dgp", dgp_config_to_json(cfg)}};
  json truth = envelope("simulate", echo);
  truth["theta"] = to_json(cfg.true_params.theta());
  truth["labels"] = theta_labels(cfg.q, cfg.dx());
  truth["delta"] = to_json(cfg.true_params.delta);
  truth["population_table"] = {{"q", pop.q}, {"p_sel", pop.p_sel}, {"p_joint", pop.p_joint}};
  truth["feasibility"] = feasibility_to_json(feas);
  truth["data"] = {{"file", std::filesystem::path(path).filename().string()},
                   {"rows", data.n()},
                   {"fnv1a64", fnv1a64(csv.str())}};
  const auto sidecar = std::filesystem::path(path).replace_extension(".truth.json").string();
  write_text(sidecar, dump(truth));
  ctx.log("wrote " + path + " and " + sidecar);
  return kExitOk;
}

int cmd_mc(const Context& ctx) {
  const DGPConfig cfg = ctx.dgp();
  std::size_t reps = 100;
  if (ctx.file.contains("replications")) reps = ctx.file["replications"].get<std::size_t>();
  if (ctx.opt.replications) reps = *ctx.opt.replications;
  EstimatorConfig ec = ctx.estimator();
  json echo = {{"seed", cfg.seed},
               {"replications", reps},
               {"dgp", dgp_config_to_json(cfg)},
               {"estimator", estimator_config_to_json(ec)}};
  ctx.log("running " + std::to_string(reps) + " replications at n = " + std::to_string(cfg.n));
  const auto rep = monte_carlo(cfg, reps, ec, ctx.workers());
  json out = envelope("mc", echo);
  out.update(mc_report_to_json(rep));
  ctx.emit(out);
  return kExitOk;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "JSON config file; explicit flags take precedence");
  sub->add_option("--out", o.out_path, "Output path (stdout when omitted)");
  sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("-v,--verbose", o.verbose, "Progress messages on stderr");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Multinomial logit with sample selection: identification and estimation"};
  app.require_subcommand(1);

  auto* id = app.add_subcommand("identify", "Closed-form identification from a probability table");
  id->add_option("table", o.input, "Table JSON {q, p_sel, p_joint}");
  id->add_option("--tolerance", o.tolerance, "Overidentification tolerance (3+ instrument values)");
  add_common(id, o);

  auto* est = app.add_subcommand("estimate", "Two-step estimation from microdata CSV");
  est->add_option("data", o.input, "CSV with columns s,y,z,x1..xd");
  est->add_option("--q", o.q, "Number of categories (default: max y)");
  est->add_flag("--include-baseline-term", o.include_baseline_term,
                "Add selected baseline-category rows to the second-stage likelihood");
  est->add_flag("--add-intercept", o.add_intercept, "Prepend a constant column to x");
  add_common(est, o);

  auto* sim = app.add_subcommand("simulate", "Sample a dataset from a DGP config");
  sim->add_option("--seed", o.seed, "Root seed");
  sim->add_option("--probes", o.probes, "Feasibility probes before sampling");
  sim->add_option("--n", o.n, "Sample size (overrides dgp.n)");
  add_common(sim, o);

  auto* mc = app.add_subcommand("mc", "Monte Carlo study of the estimator");
  mc->add_option("--seed", o.seed, "Root seed");
  mc->add_option("--n", o.n, "Sample size per replication");
  mc->add_option("--replications", o.replications, "Number of replications");
  mc->add_flag("--include-baseline-term", o.include_baseline_term,
               "Add selected baseline-category rows to the second-stage likelihood");
  add_common(mc, o);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }
  for (auto* sub : {id, est, sim, mc}) {
    if (sub->parsed()) o.command = sub->get_name();
  }

  auto report = [&](const Error& e, const json* detail) {
    json j = {{"format_version", kFormatVersion}, {"command", o.command}, {"error", error_to_json(e)}};
    if (detail) j["error"].update(*detail);
    err << dump(j);
    if (!o.out_path.empty() && o.command != "simulate") {
      try {
        write_text(o.out_path, dump(j));
      } catch (const Error&) {
      }
    }
    return exit_code_for(e);
  };

  try {
    json file = json::object();
    if (!o.config_path.empty()) {
      file = parse_json_text(read_file(o.config_path), "config file", ErrorCode::InvalidConfig);
      check_keys(file,
                 {"seed", "workers", "out", "probes", "replications", "tolerance", "table", "data",
                  "estimator", "dgp"},
                 "config");
    }
    Context ctx{o, file, out, err};
    if (o.command == "identify") return cmd_identify(ctx);
    if (o.command == "estimate") return cmd_estimate(ctx);
    if (o.command == "simulate") return cmd_simulate(ctx);
    return cmd_mc(ctx);
  } catch (const DetailedError& e) {
    return report(e, &e.detail);
  } catch (const Error& e) {
    return report(e, nullptr);
  } catch (const json::exception& e) {
    return report(Error(ErrorCode::InvalidConfig, std::string("config value has the wrong type: ") + e.what()),
                  nullptr);
  } catch (const std::exception& e) {
    err << dump({{"format_version", kFormatVersion},
                 {"command", o.command},
                 {"error", {{"code", "Internal"}, {"message", e.what()}, {"exit_code", kExitInternal}}}});
    return kExitInternal;
  }
}

}  // namespace catsel::cli
