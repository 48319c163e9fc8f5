// trendrev: command-line front end.
//
// Every command writes its result to --out atomically and a manifest sidecar
// <out>.manifest.json (command, resolved configuration, input digests, seed,
// version, timestamp, output digest). Failures print one JSON line on stderr
// and exit nonzero without touching the output path.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "trendrev/exploration.hpp"
#include "trendrev/inference.hpp"
#include "trendrev/simulator.hpp"

using namespace trendrev;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

/// Error raised for bad command-line usage that CLI11 cannot see.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// --- list parsing -------------------------------------------------------------

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto f : io::split(s, ','))
    if (!f.empty()) out.emplace_back(f);
  if (out.empty()) throw UsageError("empty list '" + s + "'");
  return out;
}

double parse_number(const std::string& s) {
  try {
    return io::parse_double(s, 0);
  } catch (const FormatError&) {
    throw UsageError("not a number: '" + s + "'");
  }
}

/// "1,3" or "5-8" or a mix; sorted unique.
std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& f : split_list(s)) {
    const auto dash = f.find('-', 1);
    try {
      if (dash == std::string::npos) {
        out.push_back(static_cast<int>(io::parse_int(f, 0)));
      } else {
        const auto lo = io::parse_int(f.substr(0, dash), 0), hi = io::parse_int(f.substr(dash + 1), 0);
        if (hi < lo) throw UsageError("bad range '" + f + "'");
        for (auto k = lo; k <= hi; ++k) out.push_back(static_cast<int>(k));
      }
    } catch (const FormatError&) {
      throw UsageError("not an integer list: '" + s + "'");
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& f : split_list(s)) out.push_back(parse_number(f));
  return out;
}

// --- options ------------------------------------------------------------------

struct Options {
  std::string prices, db, out, config, asset_map, group;
  std::string model = "scale", mask, scales = "1-10", response, aggregate = "none";
  bool intercept = false;
  double cap = kDefaultCap;
  std::size_t burn_in = kDefaultBurnIn;
  std::size_t samples = 5000;
  std::size_t folds = 15;
  std::uint64_t seed = 0;
  std::string caps = "2.0,2.25,2.5,2.75,3.0", fractions = "0";
  int bins = 15;
  unsigned threads = 0;
};

ModelSpec model_spec(const Options& o) {
  ModelSpec s;
  switch (parse_model_kind(o.model)) {
    case ModelKind::cubic: s = cubic_spec(); break;
    case ModelKind::scale: s = scale_spec(); break;
    case ModelKind::decay_linear: s = decay_spec(false); break;
    case ModelKind::decay_exp: s = decay_spec(true); break;
  }
  if (!o.mask.empty()) {
    if (s.kind != ModelKind::cubic) throw UsageError("--mask applies to the cubic model only");
    s.powers = parse_int_list(o.mask);
  }
  s.scales = parse_int_list(o.scales);
  s.intercept = o.intercept;
  if (o.response == "raw") s.response = Response::raw;
  else if (o.response == "excess") s.response = Response::excess;
  else if (!o.response.empty()) throw UsageError("--response must be raw or excess");
  if (o.aggregate == "equal") s.aggregation = Aggregation::equal;
  else if (o.aggregate == "parabolic") s.aggregation = Aggregation::parabolic;
  else if (o.aggregate != "none") throw UsageError("--aggregate must be none, equal or parabolic");
  s.validate();
  return s;
}

json spec_json(const ModelSpec& s) {
  json j;
  j["model"] = to_string(s.kind);
  if (s.kind == ModelKind::cubic) j["mask"] = s.powers;
  else j["intercept"] = s.intercept;
  j["response"] = s.response == Response::raw ? "raw" : "excess";
  j["scales"] = s.scales;
  j["aggregation"] = s.aggregation == Aggregation::none ? "none" : s.aggregation == Aggregation::equal ? "equal" : "parabolic";
  if (s.is_decay()) j["decay_grid"] = {s.decay.q_min, s.decay.q_max, s.decay.q_grid};
  return j;
}

// --- inputs and outputs -----------------------------------------------------------

/// Records digests of every input read.
struct Run {
  std::string command;
  json config = json::object();
  json inputs = json::object();
  std::optional<std::uint64_t> seed;

  std::string read(const std::string& path) {
    if (path.empty()) throw UsageError("missing input file");
    auto text = io::read_file(path);
    inputs[path] = sha256_hex(text);
    return text;
  }

  void write(const std::string& out, const std::string& content) {
    if (out.empty()) throw UsageError("--out is required");
    json m;
    m["command"] = command;
    m["config"] = config;
    m["inputs"] = inputs;
    m["seed"] = seed ? json(*seed) : json(nullptr);
    m["version"] = kVersion;
    m["timestamp"] = utc_timestamp();
    m["output"] = {{"path", out}, {"sha256", sha256_hex(content)}};
    // Write the sidecar last so an interrupted run never leaves a manifest
    // that vouches for a missing output.
    io::write_file_atomic(out, content);
    io::write_file_atomic(out + ".manifest.json", m.dump(2) + "\n");
  }
};

RawPanel load_prices(Run& run, const std::string& path) {
  const auto series = parse_prices_csv(run.read(path));
  if (series.empty()) throw FormatError("price file has no markets", 0);
  return panel_from_prices(series);
}

SignalDatabase load_db(Run& run, const std::string& path) { return parse_database_csv(run.read(path)); }

std::map<std::string, std::string> load_asset_map(Run& run, const std::string& path) {
  std::map<std::string, std::string> m;
  bool header = true;
  io::for_each_line(run.read(path), [&](std::size_t line, std::string_view s) {
    const auto f = io::split(s);
    if (header) {
      header = false;
      if (f.size() != 2 || f[0] != "market" || f[1] != "asset_class")
        throw FormatError("expected header 'market,asset_class'", line);
      return;
    }
    if (f.size() != 2 || f[0].empty() || f[1].empty()) throw FormatError("expected 'market,asset_class'", line);
    if (!m.emplace(std::string(f[0]), std::string(f[1])).second)
      throw FormatError("duplicate market '" + std::string(f[0]) + "'", line);
  });
  return m;
}

// --- result documents ----------------------------------------------------------

json fit_json(const FitResult& fit) {
  json j;
  for (const auto& [name, v] : coefficients(fit)) j[name] = number(v);
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (!std::is_same_v<T, CubicFit>) j["e"] = number(f.e);
        if constexpr (std::is_same_v<T, ScaleFit>) {
          const auto pc = critical_strength(f.b, f.c);
          j["phi_c"] = pc ? json(*pc) : json(nullptr);
        }
        if constexpr (std::is_same_v<T, DecayFit>) {
          j["scenario"] = f.scenario == DecayScenario::linear ? "linear" : "exponential";
          j["time_origin"] = f.time_origin;
        }
        if constexpr (std::is_same_v<T, CubicFit>) {
          const auto pc = critical_strength(f.b(), f.c());
          j["phi_c"] = pc ? json(*pc) : json(nullptr);
        }
        j["r_squared"] = number(f.r_squared);
        j["n"] = f.n;
        j["flags"] = f.flags;
      },
      fit);
  return j;
}

json bootstrap_json(const BootstrapResult& bs) {
  json j;
  j["n_samples"] = bs.n_samples;
  j["seed"] = bs.seed;
  j["n_excluded"] = bs.n_excluded;
  j["valid"] = bs.valid();
  j["point"] = fit_json(bs.point);
  json c = json::object();
  for (const auto& s : bs.summary)
    c[s.name] = {{"point", number(s.point)}, {"p16", number(s.p16)}, {"p50", number(s.p50)}, {"p84", number(s.p84)},
                 {"error", number(s.error)},  {"t_stat", number(s.t_stat)}};
  j["coefficients"] = c;
  return j;
}

json cv_json(const CvResult& cv) {
  json j;
  j["n_folds"] = cv.n_folds;
  j["n_predictions"] = cv.predicted.size();
  j["r_squared_adj"] = number(cv.r_squared_adj);
  json folds = json::array();
  for (std::size_t f = 0; f < cv.folds.size(); ++f)
    folds.push_back({{"first_day", cv.folds[f].begin + 1}, {"last_day", cv.folds[f].end}, {"fit", fit_json(cv.fold_fits[f])}});
  j["folds"] = folds;
  return j;
}

CvResult run_cv(Run& run, const Options& o, const ModelSpec& spec) {
  if (!o.prices.empty()) {
    const auto raw = load_prices(run, o.prices);
    CvOptions opt;
    opt.n_folds = o.folds;
    opt.burn_in = o.burn_in;
    opt.threads = o.threads;
    run.config["signals"] = "rebuilt per fold";
    return cross_validate(raw, spec, opt, o.cap);
  }
  if (!o.db.empty()) {
    run.config["signals"] = "fixed";
    return cross_validate_database(load_db(run, o.db), spec, o.folds, o.threads);
  }
  throw UsageError("cv needs --prices or --db");
}

// --- simulate config -----------------------------------------------------------------

SimConfig sim_config(const json& j) {
  static const std::vector<std::string> known = {
      "n_markets", "n_days", "n_blocks", "effective_markets", "b", "c", "k0", "delta_k", "beta", "Q_b", "Q_c",
      "exponential_decay", "premia", "sigma", "noise", "nu", "seed", "generator", "active_scales", "single_scale",
      "cap", "burn_in", "start"};
  if (!j.is_object()) throw FormatError("simulate config must be a JSON object", 0);
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw FormatError("unknown config key '" + k + "'", 0);
  SimConfig c;
  try {
    c.n_markets = j.value("n_markets", c.n_markets);
    c.n_days = j.value("n_days", c.n_days);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.effective_markets = j.value("effective_markets", c.effective_markets);
    if (j.contains("beta")) {
      if (j.contains("k0") || j.contains("delta_k") || j.contains("b")) throw FormatError("give either beta or b/k0/delta_k", 0);
      c.beta = j.at("beta").get<std::array<double, 3>>();
      c.c = j.value("c", 0.0);
    } else if (j.contains("k0") || j.contains("delta_k")) {
      c.set_scale_model(j.at("b").get<double>(), j.value("c", 0.0), j.at("k0").get<double>(), j.at("delta_k").get<double>());
    } else {
      c.set_flat_model(j.value("b", 0.0), j.value("c", 0.0));
    }
    c.Q_b = j.value("Q_b", 0.0);
    c.Q_c = j.value("Q_c", 0.0);
    c.exponential_decay = j.value("exponential_decay", false);
    c.premia = j.value("premia", std::vector<double>{});
    c.sigma = j.value("sigma", c.sigma);
    const auto noise = j.value("noise", std::string("normal"));
    if (noise == "normal") c.noise = NoiseKind::normal;
    else if (noise == "student_t") c.noise = NoiseKind::student_t;
    else throw FormatError("noise must be normal or student_t", 0);
    c.nu = j.value("nu", c.nu);
    c.seed = j.value("seed", c.seed);
    const auto gen = j.value("generator", std::string("calibrated"));
    if (gen == "calibrated") c.generator = Generator::calibrated;
    else if (gen == "mean_field") c.generator = Generator::mean_field;
    else if (gen == "single_scale") c.generator = Generator::single_scale;
    else throw FormatError("generator must be calibrated, mean_field or single_scale", 0);
    c.active_scales = j.value("active_scales", c.active_scales);
    c.single_scale = j.value("single_scale", c.single_scale);
    c.cap = j.value("cap", c.cap);
    c.burn_in = j.value("burn_in", c.burn_in);
    if (j.contains("start")) c.start = io::parse_date(j.at("start").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("simulate config: ") + e.what(), 0);
  }
  c.validate();
  return c;
}

// --- commands ---------------------------------------------------------------------

void cmd_ingest(Run& run, const Options& o) {
  const auto series = parse_prices_csv(run.read(o.prices));
  if (series.empty()) throw FormatError("price file has no markets", 0);
  const auto raw = panel_from_prices(series);
  // Aligned prices on the union calendar; missing days carry the last price.
  Date first = series.front().dates.front();
  for (const auto& s : series) first = std::min(first, s.dates.front());
  run.write(o.out, format_prices_csv(prices_from_panel(raw, first)));
}

void cmd_signals(Run& run, const Options& o) {
  run.config["cap"] = o.cap;
  run.config["burn_in"] = o.burn_in;
  const auto raw = load_prices(run, o.prices);
  const auto db = build_signal_database(normalize_panel(raw), o.burn_in, o.cap);
  run.write(o.out, format_database_csv(db));
}

void cmd_fit(Run& run, const Options& o) {
  const auto spec = model_spec(o);
  run.config["model"] = spec_json(spec);
  const auto db = load_db(run, o.db);
  run.write(o.out, fit_json(fit_model(db, spec)).dump(2) + "\n");
}

void cmd_bootstrap(Run& run, const Options& o) {
  const auto spec = model_spec(o);
  run.config["model"] = spec_json(spec);
  run.config["samples"] = o.samples;
  run.seed = o.seed;
  const auto db = load_db(run, o.db);
  if (o.group.empty()) {
    run.write(o.out, bootstrap_json(bootstrap(db, spec, o.samples, o.seed, {}, o.threads)).dump(2) + "\n");
    return;
  }
  run.config["group"] = o.group;
  std::vector<NamedFilter> groups;
  if (o.group == "asset-class") {
    if (o.asset_map.empty()) throw UsageError("--group asset-class needs --asset-map");
    groups = asset_class_groups(db, load_asset_map(run, o.asset_map));
  } else if (o.group == "period-thirds") {
    groups = period_third_groups(db);
  } else {
    throw UsageError("--group must be asset-class or period-thirds");
  }
  const auto res = subset_analysis(db, spec, groups, o.samples, o.seed, {}, o.threads);
  json j;
  j["n_samples"] = o.samples;
  j["seed"] = o.seed;
  j["overall"] = fit_json(res.overall);
  json arr = json::array();
  for (const auto& g : res.groups) {
    json r = json::object();
    for (std::size_t k = 0; k < g.names.size(); ++k)
      r[g.names[k]] = {number(g.ratio_quantiles[k][0]), number(g.ratio_quantiles[k][1]), number(g.ratio_quantiles[k][2])};
    arr.push_back({{"group", g.group}, {"n_rows", g.n_rows}, {"n_excluded", g.n_excluded}, {"fit", fit_json(g.fit)},
                   {"ratio_p16_p50_p84", r}});
  }
  j["groups"] = arr;
  run.write(o.out, j.dump(2) + "\n");
}

void cmd_cv(Run& run, const Options& o) {
  const auto spec = model_spec(o);
  run.config["model"] = spec_json(spec);
  run.config["folds"] = o.folds;
  run.config["cap"] = o.cap;
  run.config["burn_in"] = o.burn_in;
  run.write(o.out, cv_json(run_cv(run, o, spec)).dump(2) + "\n");
}

void cmd_bins(Run& run, const Options& o) {
  const auto scales = parse_int_list(o.scales);
  run.config["bins"] = o.bins;
  run.config["scales"] = scales;
  const auto db = load_db(run, o.db);
  run.write(o.out, format_bins_csv(bin_curve(db, o.bins, scales)));
}

void cmd_heatmap(Run& run, const Options& o) {
  run.config["bins"] = o.bins;
  const auto db = load_db(run, o.db);
  run.write(o.out, format_heatmap_csv(heatmap(db, o.bins)));
}

void cmd_simulate(Run& run, const Options& o, bool seed_given) {
  json j = json::object();
  if (!o.config.empty()) {
    try {
      j = json::parse(run.read(o.config));
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("simulate config: ") + e.what(), 0);
    }
  }
  auto cfg = sim_config(j);
  if (seed_given) cfg.seed = o.seed;
  j["seed"] = cfg.seed;
  run.config["simulation"] = j;
  run.seed = cfg.seed;
  const auto sim = simulate_panel(cfg);
  run.write(o.out, format_prices_csv(prices_from_panel(sim.raw, sim.raw.days.front() - std::chrono::days{1})));
}

void cmd_sweep(Run& run, const Options& o) {
  SweepOptions opt;
  opt.model = model_spec(o);
  opt.burn_in = o.burn_in;
  opt.n_samples = o.samples;
  opt.seed = o.seed;
  opt.n_folds = o.folds;
  opt.threads = o.threads;
  const auto caps = parse_double_list(o.caps), fractions = parse_double_list(o.fractions);
  run.config["model"] = spec_json(opt.model);
  run.config["caps"] = caps;
  run.config["premium_fractions"] = fractions;
  run.config["samples"] = o.samples;
  run.config["folds"] = o.folds;
  run.seed = o.seed;
  const auto raw = load_prices(run, o.prices);
  const auto cells = sensitivity_sweep(raw, caps, fractions, opt);
  std::string s = "cap,premium_fraction";
  for (const auto& c : cells.front().bootstrap.summary) s += ',' + c.name + ",t_" + c.name;
  s += ",r_squared_adj,r_squared_adj_aggregated,n_excluded\n";
  for (const auto& cell : cells) {
    s += io::format_double(cell.cap) + ',' + io::format_double(cell.premium_fraction);
    for (const auto& c : cell.bootstrap.summary) s += ',' + io::format_double(c.point) + ',' + io::format_double(c.t_stat);
    s += ',' + io::format_double(cell.r_squared_adj) + ',' + io::format_double(cell.r_squared_adj_aggregated) + ',' +
         std::to_string(cell.bootstrap.n_excluded) + '\n';
  }
  run.write(o.out, s);
}

void cmd_report(Run& run, const Options& o) {
  const auto spec = model_spec(o);
  run.config["model"] = spec_json(spec);
  run.config["samples"] = o.samples;
  run.config["folds"] = o.folds;
  run.seed = o.seed;
  const auto db = load_db(run, o.db);
  json j;
  j["model"] = spec_json(spec);
  j["fit"] = fit_json(fit_model(db, spec));
  j["bootstrap"] = bootstrap_json(bootstrap(db, spec, o.samples, o.seed, {}, o.threads));
  j["cv"] = cv_json(run_cv(run, o, spec));
  run.write(o.out, j.dump(2) + "\n");
}

void fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  std::exit(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trend and reversion signals, model fits and inference for futures panels"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;
  bool seed_given = false;

  auto model_flags = [&](CLI::App* c) {
    c->add_option("--model", o.model, "cubic, scale, decay or decay-exp")->default_val("scale");
    c->add_option("--mask", o.mask, "cubic powers of phi, e.g. 0,1,3");
    c->add_option("--scales", o.scales, "scale indices, e.g. 1-10 or 5,6,7,8");
    c->add_option("--response", o.response, "raw or excess (default per model)");
    c->add_option("--aggregate", o.aggregate, "cubic factor: none, equal or parabolic");
    c->add_flag("--intercept", o.intercept, "pooled intercept for scale and decay models");
  };
  auto common = [&](CLI::App* c) {
    c->add_option("--out", o.out, "output path")->required();
    c->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  };
  auto seed_flag = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { o.seed = s, seed_given = true; },
                                          "master seed");
  };

  auto* ingest = app.add_subcommand("ingest", "validate and align a price file");
  ingest->add_option("--prices", o.prices)->required();
  common(ingest);

  auto* signals = app.add_subcommand("signals", "build the signal database");
  signals->add_option("--prices", o.prices)->required();
  signals->add_option("--cap", o.cap);
  signals->add_option("--burn-in", o.burn_in);
  common(signals);

  auto* fit = app.add_subcommand("fit", "point fit of a return model");
  fit->add_option("--db", o.db)->required();
  model_flags(fit);
  common(fit);

  auto* boot = app.add_subcommand("bootstrap", "day-block bootstrap, optionally per subset");
  boot->add_option("--db", o.db)->required();
  boot->add_option("--samples", o.samples);
  boot->add_option("--group", o.group, "asset-class or period-thirds");
  boot->add_option("--asset-map", o.asset_map, "CSV market,asset_class");
  model_flags(boot);
  seed_flag(boot);
  common(boot);

  auto* cv = app.add_subcommand("cv", "contiguous cross-validation");
  cv->add_option("--prices", o.prices, "rebuild signals per fold");
  cv->add_option("--db", o.db, "keep the database signals fixed");
  cv->add_option("--folds", o.folds);
  cv->add_option("--cap", o.cap);
  cv->add_option("--burn-in", o.burn_in);
  model_flags(cv);
  common(cv);

  auto* bins = app.add_subcommand("bins", "mean next-day return per trend-strength bin");
  bins->add_option("--db", o.db)->required();
  bins->add_option("--scales", o.scales);
  bins->add_option("--bins", o.bins);
  common(bins);

  auto* heat = app.add_subcommand("heatmap", "smoothed bin x scale return matrix");
  heat->add_option("--db", o.db)->required();
  heat->add_option("--bins", o.bins);
  common(heat);

  auto* sim = app.add_subcommand("simulate", "simulate a price panel");
  sim->add_option("--config", o.config, "JSON simulation config");
  seed_flag(sim);
  common(sim);

  auto* sweep = app.add_subcommand("sweep", "cap and premium-fraction sensitivity grid");
  sweep->add_option("--prices", o.prices)->required();
  sweep->add_option("--caps", o.caps);
  sweep->add_option("--premium-fractions", o.fractions);
  sweep->add_option("--samples", o.samples);
  sweep->add_option("--folds", o.folds);
  sweep->add_option("--burn-in", o.burn_in);
  model_flags(sweep);
  seed_flag(sweep);
  common(sweep);

  auto* report = app.add_subcommand("report", "fit, bootstrap and cv in one document");
  report->add_option("--db", o.db)->required();
  report->add_option("--prices", o.prices, "rebuild signals per fold for the cv part");
  report->add_option("--samples", o.samples);
  report->add_option("--folds", o.folds);
  report->add_option("--cap", o.cap);
  report->add_option("--burn-in", o.burn_in);
  model_flags(report);
  seed_flag(report);
  common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what(), 2);
  }

  Run run;
  run.command = app.get_subcommands().front()->get_name();
  try {
    if (run.command == "ingest") cmd_ingest(run, o);
    else if (run.command == "signals") cmd_signals(run, o);
    else if (run.command == "fit") cmd_fit(run, o);
    else if (run.command == "bootstrap") cmd_bootstrap(run, o);
    else if (run.command == "cv") cmd_cv(run, o);
    else if (run.command == "bins") cmd_bins(run, o);
    else if (run.command == "heatmap") cmd_heatmap(run, o);
    else if (run.command == "simulate") cmd_simulate(run, o, seed_given);
    else if (run.command == "sweep") cmd_sweep(run, o);
    else if (run.command == "report") cmd_report(run, o);
  } catch (const UsageError& e) {
    fail("usage", e.what(), 2);
  } catch (const FormatError& e) {
    fail("format", e.what(), 3);
  } catch (const CollinearityError& e) {
    fail("collinear", e.what(), 4);
  } catch (const Error& e) {
    fail("input", e.what(), 4);
  } catch (const std::exception& e) {
    fail("internal", e.what(), 5);
  }
  return 0;
}
