/// @file harness.cpp
/// @brief Config schema validation and the experiment dispatcher.

#include "sdeflow/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "sdeflow/coefficients.hpp"
#include "sdeflow/density.hpp"
#include "sdeflow/flow.hpp"
#include "sdeflow/fpe.hpp"
#include "sdeflow/io.hpp"
#include "sdeflow/ldp.hpp"
#include "sdeflow/stability.hpp"

namespace sdeflow {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path, msg);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) fail(path + "." + it.key(), "unknown key");
  }
}

const json& need(const json& obj, const char* key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end()) fail(path, std::string("missing required key '") + key + "'");
  return *it;
}

double as_num(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

long long as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  return v.get<long long>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) fail(path, "expected a boolean");
  return v.get<bool>();
}

std::string as_str(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

double need_num(const json& obj, const char* key, const std::string& path) {
  return as_num(need(obj, key, path), path + "." + key);
}

long long need_int(const json& obj, const char* key, const std::string& path) {
  return as_int(need(obj, key, path), path + "." + key);
}

std::string need_str(const json& obj, const char* key, const std::string& path) {
  return as_str(need(obj, key, path), path + "." + key);
}

/// Optional entries write their default back so the resolved config is
/// self-describing.
double opt_num(json& obj, const char* key, const std::string& path, double def) {
  if (!obj.contains(key)) obj[key] = def;
  return as_num(obj[key], path + "." + key);
}

long long opt_int(json& obj, const char* key, const std::string& path, long long def) {
  if (!obj.contains(key)) obj[key] = def;
  return as_int(obj[key], path + "." + key);
}

bool opt_bool(json& obj, const char* key, const std::string& path, bool def) {
  if (!obj.contains(key)) obj[key] = def;
  return as_bool(obj[key], path + "." + key);
}

std::string opt_str(json& obj, const char* key, const std::string& path, const char* def) {
  if (!obj.contains(key)) obj[key] = def;
  return as_str(obj[key], path + "." + key);
}

std::vector<double> as_num_array(const json& v, const std::string& path, size_t min_len = 1) {
  if (!v.is_array()) fail(path, "expected an array");
  std::vector<double> out;
  for (size_t i = 0; i < v.size(); ++i) out.push_back(as_num(v[i], path + "[" + std::to_string(i) + "]"));
  if (out.size() < min_len) fail(path, "array too short");
  return out;
}

std::vector<long long> as_int_array(const json& v, const std::string& path, size_t min_len = 1) {
  if (!v.is_array()) fail(path, "expected an array");
  std::vector<long long> out;
  for (size_t i = 0; i < v.size(); ++i) out.push_back(as_int(v[i], path + "[" + std::to_string(i) + "]"));
  if (out.size() < min_len) fail(path, "array too short");
  return out;
}

Vec vec_from(const std::vector<double>& a, const std::string& path, int d) {
  if (static_cast<int>(a.size()) != d) fail(path, "expected " + std::to_string(d) + " entries");
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = a[static_cast<size_t>(i)];
  return v;
}

Box parse_box(const json& knobs, const std::string& path, int d) {
  Box box;
  box.d = d;
  box.lo = vec_from(as_num_array(need(knobs, "box_lo", path), path + ".box_lo"), path + ".box_lo", d);
  box.hi = vec_from(as_num_array(need(knobs, "box_hi", path), path + ".box_hi"), path + ".box_hi", d);
  for (int i = 0; i < d; ++i)
    if (!(box.lo[i] < box.hi[i])) fail(path + ".box_hi", "box must have positive extent");
  return box;
}

/// An axis count: either one integer (all axes) or an array of d integers.
std::array<int, kMaxDim> parse_axes(const json& v, const std::string& path, int d, int min_val) {
  std::array<int, kMaxDim> n{1, 1, 1};
  if (v.is_number_integer()) {
    const long long k = v.get<long long>();
    if (k < min_val) fail(path, "value must be >= " + std::to_string(min_val));
    for (int i = 0; i < d; ++i) n[static_cast<size_t>(i)] = static_cast<int>(k);
    return n;
  }
  const auto arr = as_int_array(v, path, static_cast<size_t>(d));
  if (static_cast<int>(arr.size()) != d) fail(path, "expected " + std::to_string(d) + " entries");
  for (int i = 0; i < d; ++i) {
    if (arr[static_cast<size_t>(i)] < min_val) fail(path, "value must be >= " + std::to_string(min_val));
    n[static_cast<size_t>(i)] = static_cast<int>(arr[static_cast<size_t>(i)]);
  }
  return n;
}

std::vector<double> parse_times(const json& v, const std::string& path) {
  const auto times = as_num_array(v, path);
  for (size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0 || times[i] > 1.0) fail(path, "times must lie in [0, 1]");
    if (i > 0 && times[i] <= times[i - 1]) fail(path, "times must be strictly increasing");
  }
  return times;
}

std::map<std::string, double> parse_params(const json& obj, const std::string& path) {
  std::map<std::string, double> out;
  if (!obj.is_object()) fail(path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    out[it.key()] = as_num(it.value(), path + "." + it.key());
  return out;
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  for (const char* o : options)
    if (v == o) return true;
  return false;
}

std::string options_text(std::initializer_list<const char*> options) {
  std::string s;
  for (const char* o : options) {
    if (!s.empty()) s += " | ";
    s += o;
  }
  return s;
}

// ---------------------------------------------------------------------------
// kind-specific knob validation (fills defaults into the resolved document)
// ---------------------------------------------------------------------------

void validate_mollify(json& k, const VectorFieldSpec& field, const std::string& path) {
  check_keys(k, path, {"eps", "box_lo", "box_hi", "grid_n"});
  if (!(need_num(k, "eps", path) > 0)) fail(path + ".eps", "eps must be positive");
  parse_box(k, path, field.d);
  if (opt_int(k, "grid_n", path, 128) < 2) fail(path + ".grid_n", "need at least 2 points per axis");
}

void validate_flow(json& k, const VectorFieldSpec& field, const std::string& path) {
  check_keys(k, path, {"box_lo", "box_hi", "grid_n", "steps", "saves", "replicates", "scheme",
                       "tangent"});
  parse_box(k, path, field.d);
  parse_axes(need(k, "grid_n", path), path + ".grid_n", field.d, 1);
  if (need_int(k, "steps", path) < 100)
    fail(path + ".steps", "need at least 100 steps (dt <= 1e-2)");
  parse_times(need(k, "saves", path), path + ".saves");
  if (opt_int(k, "replicates", path, 1) < 1) fail(path + ".replicates", "must be >= 1");
  const std::string scheme = opt_str(k, "scheme", path, "ito-euler");
  try {
    scheme_from_tag(scheme);
  } catch (const std::exception&) {
    fail(path + ".scheme", "unknown scheme tag '" + scheme + "'");
  }
  opt_bool(k, "tangent", path, false);
}

void validate_density(json& k, const VectorFieldSpec& field, bool has_measure,
                      const std::string& path) {
  const std::string task = need_str(k, "task", path);
  const auto tasks = {"jacobian_bins", "lp_bound", "certificate"};
  if (!one_of(task, tasks)) fail(path + ".task", "expected one of: " + options_text(tasks));
  if (!has_measure) fail("$.measure", "density experiments require a measure");
  check_keys(k, path,
             {"task", "box_lo", "box_hi", "grid_n", "steps", "saves", "replicates", "scheme",
              "bins", "bin_box_lo", "bin_box_hi", "p", "quad_n", "mu_subdiv", "t_check"});
  if (task != "jacobian_bins" && (k.contains("bin_box_lo") || k.contains("bin_box_hi")))
    fail(path + ".bin_box_lo", "only the jacobian task takes a separate bin box");
  parse_box(k, path, field.d);
  parse_axes(need(k, "grid_n", path), path + ".grid_n", field.d, 1);
  if (need_int(k, "steps", path) < 100)
    fail(path + ".steps", "need at least 100 steps (dt <= 1e-2)");
  const auto saves = parse_times(need(k, "saves", path), path + ".saves");
  if (opt_int(k, "replicates", path, 1) < 1) fail(path + ".replicates", "must be >= 1");
  const std::string scheme = opt_str(k, "scheme", path, "ito-euler");
  try {
    scheme_from_tag(scheme);
  } catch (const std::exception&) {
    fail(path + ".scheme", "unknown scheme tag '" + scheme + "'");
  }
  if (opt_int(k, "mu_subdiv", path, 4) < 1) fail(path + ".mu_subdiv", "must be >= 1");
  if (task == "jacobian_bins") {
    parse_axes(need(k, "bins", path), path + ".bins", field.d, 2);
    if (k.contains("bin_box_lo") != k.contains("bin_box_hi"))
      fail(path, "bin_box_lo and bin_box_hi must be given together");
  } else {
    if (!(need_num(k, "p", path) > 1)) fail(path + ".p", "p must exceed 1");
    parse_axes(k.contains("quad_n") ? k["quad_n"] : (k["quad_n"] = 64), path + ".quad_n",
               field.d, 2);
    if (task == "lp_bound")
      parse_axes(k.contains("bins") ? k["bins"] : (k["bins"] = 64), path + ".bins", field.d, 2);
    else if (k.contains("bins"))
      fail(path + ".bins", "the certificate task does not bin");
    const double t_check = opt_num(k, "t_check", path, saves.back());
    if (std::find(saves.begin(), saves.end(), t_check) == saves.end())
      fail(path + ".t_check", "must be one of the save times");
  }
}

void validate_stability(json& k, const VectorFieldSpec& field, bool has_measure,
                        const std::string& path) {
  const std::string task = need_str(k, "task", path);
  const auto tasks = {"cauchy", "audit"};
  if (!one_of(task, tasks)) fail(path + ".task", "expected one of: " + options_text(tasks));
  if (task == "cauchy") {
    if (!has_measure) fail("$.measure", "the gap study integrates against a measure");
    check_keys(k, path,
               {"task", "levels", "delta", "radius_ball", "radius_confine", "replicates",
                "box_lo", "box_hi", "grid_n", "steps", "monitor", "tabulate_n", "scheme"});
    const auto levels = as_int_array(need(k, "levels", path), path + ".levels", 2);
    for (size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] < 1) fail(path + ".levels", "levels must be >= 1");
      if (i > 0 && levels[i] <= levels[i - 1])
        fail(path + ".levels", "levels must be strictly increasing");
    }
    const double delta = need_num(k, "delta", path);
    if (!(delta > 0 && delta < 0.25)) fail(path + ".delta", "delta must lie in (0, 1/4)");
    if (!(need_num(k, "radius_ball", path) > 0)) fail(path + ".radius_ball", "must be positive");
    if (!(need_num(k, "radius_confine", path) > 0))
      fail(path + ".radius_confine", "must be positive");
    if (opt_int(k, "replicates", path, 4) < 1) fail(path + ".replicates", "must be >= 1");
    parse_box(k, path, field.d);
    parse_axes(need(k, "grid_n", path), path + ".grid_n", field.d, 1);
    if (need_int(k, "steps", path) < 100)
      fail(path + ".steps", "need at least 100 steps (dt <= 1e-2)");
    if (opt_int(k, "monitor", path, 16) < 1) fail(path + ".monitor", "must be >= 1");
    if (opt_int(k, "tabulate_n", path, 16384) < 0) fail(path + ".tabulate_n", "must be >= 0");
    const std::string scheme = opt_str(k, "scheme", path, "ito-euler");
    try {
      scheme_from_tag(scheme);
    } catch (const std::exception&) {
      fail(path + ".scheme", "unknown scheme tag '" + scheme + "'");
    }
  } else {
    check_keys(k, path,
               {"task", "radius", "pairs", "box_lo", "box_hi", "catalog", "ladder", "radial",
                "angular"});
    if (!(need_num(k, "radius", path) > 0)) fail(path + ".radius", "must be positive");
    if (need_int(k, "pairs", path) < 1) fail(path + ".pairs", "must be >= 1");
    parse_box(k, path, field.d);
    opt_bool(k, "catalog", path, false);
    if (opt_int(k, "ladder", path, 8) < 2) fail(path + ".ladder", "must be >= 2");
    if (opt_int(k, "radial", path, 8) < 2) fail(path + ".radial", "must be >= 2");
    if (opt_int(k, "angular", path, 8) < 2) fail(path + ".angular", "must be >= 2");
  }
}

void validate_fpe(json& k, const VectorFieldSpec& field, const std::string& path) {
  check_keys(k, path,
             {"box_lo", "box_hi", "cells", "dt", "t_end", "save_times", "ic", "advection_order",
              "time_order", "eps_pde", "closed_form", "mc"});
  if (field.d > 2) fail("$.field.name", "the forward solver supports d <= 2");
  parse_box(k, path, field.d);
  const auto cells = parse_axes(need(k, "cells", path), path + ".cells", field.d, 3);
  if (!(need_num(k, "dt", path) > 0)) fail(path + ".dt", "must be positive");
  if (!(need_num(k, "t_end", path) > 0)) fail(path + ".t_end", "must be positive");
  const auto save_times = as_num_array(need(k, "save_times", path), path + ".save_times");
  for (size_t i = 0; i < save_times.size(); ++i) {
    if (save_times[i] < 0) fail(path + ".save_times", "times must be >= 0");
    if (i > 0 && save_times[i] <= save_times[i - 1])
      fail(path + ".save_times", "times must be strictly increasing");
  }
  const json& ic = need(k, "ic", path);
  if (!ic.is_object()) fail(path + ".ic", "expected an object");
  const std::string ic_name = need_str(ic, "name", path + ".ic");
  if (ic_name == "gaussian") {
    check_keys(ic, path + ".ic", {"name", "mean", "var"});
    vec_from(as_num_array(need(ic, "mean", path + ".ic"), path + ".ic.mean"), path + ".ic.mean",
             field.d);
    if (!(need_num(ic, "var", path + ".ic") > 0)) fail(path + ".ic.var", "must be positive");
  } else if (ic_name == "uniform") {
    check_keys(ic, path + ".ic", {"name"});
  } else {
    fail(path + ".ic.name", "expected one of: gaussian | uniform");
  }
  const long long adv = opt_int(k, "advection_order", path, 1);
  if (adv != 1 && adv != 2) fail(path + ".advection_order", "expected 1 or 2");
  const long long tor = opt_int(k, "time_order", path, 1);
  if (tor != 1 && tor != 2) fail(path + ".time_order", "expected 1 or 2");
  opt_num(k, "eps_pde", path, -1.0);
  const std::string closed = opt_str(k, "closed_form", path, "none");
  const auto closed_opts = {"none", "heat", "ou"};
  if (!one_of(closed, closed_opts))
    fail(path + ".closed_form", "expected one of: " + options_text(closed_opts));
  if (closed == "heat" && !(field.name == "constant" && field.d == 1))
    fail(path + ".closed_form", "'heat' needs the 1D constant field");
  if (closed == "ou" && !(field.name == "ou" && field.d == 1))
    fail(path + ".closed_form", "'ou' needs the 1D mean-reversion field");
  if (closed != "none" && ic_name != "gaussian")
    fail(path + ".closed_form", "closed forms need the gaussian initial condition");
  if (k.contains("mc")) {
    json& mc = k["mc"];
    if (!mc.is_object()) fail(path + ".mc", "expected an object");
    check_keys(mc, path + ".mc", {"particles", "bins", "dt"});
    if (need_int(mc, "particles", path + ".mc") < 1) fail(path + ".mc.particles", "must be >= 1");
    const auto bins = parse_axes(need(mc, "bins", path + ".mc"), path + ".mc.bins", field.d, 2);
    if (!(need_num(mc, "dt", path + ".mc") > 0)) fail(path + ".mc.dt", "must be positive");
    for (int i = 0; i < field.d; ++i)
      if (cells[static_cast<size_t>(i)] % bins[static_cast<size_t>(i)] != 0)
        fail(path + ".mc.bins", "solver cells must be a multiple of the histogram bins");
  }
}

EventTarget parse_target(const json& t, const std::string& path, int d) {
  if (!t.is_object()) fail(path, "expected an object");
  const std::string type = need_str(t, "type", path);
  if (type == "whole") {
    check_keys(t, path, {"type"});
    return EventTarget::whole(d);
  }
  if (type == "endpoint") {
    check_keys(t, path, {"type", "point"});
    return EventTarget::endpoint(
        vec_from(as_num_array(need(t, "point", path), path + ".point"), path + ".point", d));
  }
  if (type == "halfspace" || type == "running_max") {
    check_keys(t, path, {"type", "direction", "level"});
    const Vec dir = vec_from(as_num_array(need(t, "direction", path), path + ".direction"),
                             path + ".direction", d);
    const double level = need_num(t, "level", path);
    return type == "halfspace" ? EventTarget::halfspace(dir, level)
                               : EventTarget::threshold(dir, level);
  }
  fail(path + ".type", "expected one of: whole | endpoint | halfspace | running_max");
}

void validate_rate_knobs(json& k, const std::string& path, int d) {
  parse_target(need(k, "target", path), path + ".target", d);
  if (need_int(k, "segments", path) < 16) fail(path + ".segments", "need at least 16 segments");
  if (!k.contains("optimizer")) k["optimizer"] = json::object();
  json& o = k["optimizer"];
  if (!o.is_object()) fail(path + ".optimizer", "expected an object");
  const std::string opath = path + ".optimizer";
  check_keys(o, opath, {"max_iters", "grad_tol", "penalty0", "stages", "feas_tol"});
  if (opt_int(o, "max_iters", opath, 400) < 1) fail(opath + ".max_iters", "must be >= 1");
  if (!(opt_num(o, "grad_tol", opath, 1e-9) > 0)) fail(opath + ".grad_tol", "must be positive");
  if (!(opt_num(o, "penalty0", opath, 100.0) > 0)) fail(opath + ".penalty0", "must be positive");
  if (opt_int(o, "stages", opath, 4) < 1) fail(opath + ".stages", "must be >= 1");
  if (!(opt_num(o, "feas_tol", opath, 1e-4) > 0)) fail(opath + ".feas_tol", "must be positive");
}

void validate_table_knobs(json& k, const std::string& path, int d) {
  parse_target(need(k, "target", path), path + ".target", d);
  const auto ladder = as_num_array(need(k, "eps_ladder", path), path + ".eps_ladder");
  for (double e : ladder)
    if (!(e > 0 && e < 1)) fail(path + ".eps_ladder", "entries must lie in (0, 1)");
  if (need_int(k, "particles", path) < 1) fail(path + ".particles", "must be >= 1");
  if (need_int(k, "mc_steps", path) < 1) fail(path + ".mc_steps", "must be >= 1");
}

void validate_ldp(json& k, const VectorFieldSpec& field, const std::string& path) {
  const std::string task = need_str(k, "task", path);
  const auto tasks = {"rate", "table", "laplace", "weak", "sandwich"};
  if (!one_of(task, tasks)) fail(path + ".task", "expected one of: " + options_text(tasks));
  const int d = field.d;
  if (task != "weak")
    vec_from(as_num_array(need(k, "x0", path), path + ".x0"), path + ".x0", d);
  if (task == "rate") {
    check_keys(k, path, {"task", "x0", "target", "segments", "optimizer"});
    validate_rate_knobs(k, path, d);
  } else if (task == "table") {
    check_keys(k, path, {"task", "x0", "target", "eps_ladder", "particles", "mc_steps"});
    validate_table_knobs(k, path, d);
  } else if (task == "sandwich") {
    check_keys(k, path, {"task", "x0", "target", "segments", "optimizer", "eps_ladder",
                         "particles", "mc_steps", "tol"});
    validate_rate_knobs(k, path, d);
    validate_table_knobs(k, path, d);
    if (!(opt_num(k, "tol", path, 0.15) > 0)) fail(path + ".tol", "must be positive");
  } else if (task == "laplace") {
    check_keys(k, path, {"task", "x0", "g", "bound", "eps", "particles", "mc_steps"});
    const json& g = need(k, "g", path);
    if (!g.is_object()) fail(path + ".g", "expected an object");
    const std::string gname = need_str(g, "name", path + ".g");
    double default_bound = 0.0;
    if (gname == "constant") {
      check_keys(g, path + ".g", {"name", "c"});
      default_bound = std::abs(need_num(g, "c", path + ".g"));
    } else if (gname == "capped_quadratic") {
      check_keys(g, path + ".g", {"name", "shift", "cap"});
      need_num(g, "shift", path + ".g");
      const double cap = need_num(g, "cap", path + ".g");
      if (!(cap > 0)) fail(path + ".g.cap", "must be positive");
      default_bound = cap;
    } else {
      fail(path + ".g.name", "expected one of: constant | capped_quadratic");
    }
    if (!(opt_num(k, "bound", path, default_bound) >= default_bound))
      fail(path + ".bound", "bound must dominate the functional's range");
    if (!(need_num(k, "eps", path) > 0)) fail(path + ".eps", "must be positive");
    if (need_int(k, "particles", path) < 1) fail(path + ".particles", "must be >= 1");
    if (need_int(k, "mc_steps", path) < 1) fail(path + ".mc_steps", "must be >= 1");
  } else {  // weak
    check_keys(k, path, {"task", "x0", "control_segments", "base_level", "family_n", "ball"});
    if (!k.contains("x0")) {
      json zeros = json::array();
      for (int i = 0; i < d; ++i) zeros.push_back(0.0);
      k["x0"] = zeros;
    }
    vec_from(as_num_array(k["x0"], path + ".x0"), path + ".x0", d);
    if (need_int(k, "control_segments", path) < 2)
      fail(path + ".control_segments", "must be >= 2");
    const double base = opt_num(k, "base_level", path, 0.5);
    const auto family = as_int_array(need(k, "family_n", path), path + ".family_n");
    for (long long n : family)
      if (n < 1) fail(path + ".family_n", "indices must be >= 1");
    const double ball = opt_num(k, "ball", path, 2.0);
    if (std::sqrt(base * base + 0.5) > ball)
      fail(path + ".ball", "the oscillating family leaves the declared L2 ball");
    if (field.m != 1) fail("$.field.name", "the oscillation study drives one noise component");
  }
}

// ---------------------------------------------------------------------------
// pipelines
// ---------------------------------------------------------------------------

struct Outputs {
  std::vector<std::pair<std::string, std::string>> files;  // name -> content

  void add(const std::string& name, std::string content) {
    files.emplace_back(name, std::move(content));
  }
};

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

VectorFieldSpec field_of(const ExperimentConfig& cfg) {
  return make_field(cfg.field_name, cfg.field_params);
}

WeightedMeasure measure_of(const ExperimentConfig& cfg) {
  return make_measure(cfg.measure_name, cfg.measure_params);
}

std::vector<double> times_of(const json& v) { return v.get<std::vector<double>>(); }

Vec vec_of(const json& v) {
  Vec x(static_cast<int>(v.size()));
  for (int i = 0; i < x.d; ++i) x[i] = v[static_cast<size_t>(i)].get<double>();
  return x;
}

std::array<int, kMaxDim> axes_of(const json& v, int d) {
  std::array<int, kMaxDim> n{1, 1, 1};
  if (v.is_number_integer()) {
    for (int i = 0; i < d; ++i) n[static_cast<size_t>(i)] = v.get<int>();
  } else {
    for (int i = 0; i < d; ++i) n[static_cast<size_t>(i)] = v[static_cast<size_t>(i)].get<int>();
  }
  return n;
}

Box box_of(const json& knobs, int d) {
  Box box;
  box.d = d;
  box.lo = vec_of(knobs["box_lo"]);
  box.hi = vec_of(knobs["box_hi"]);
  return box;
}

Outputs run_mollify(const ExperimentConfig& cfg, const std::string& hash) {
  const VectorFieldSpec field = field_of(cfg);
  const json& k = cfg.knobs;
  const double eps = k["eps"].get<double>();
  const Box box = box_of(k, field.d);
  std::array<int, kMaxDim> n{1, 1, 1};
  for (int i = 0; i < field.d; ++i) n[static_cast<size_t>(i)] = k["grid_n"].get<int>();

  const auto kernel = std::make_shared<const MollifierKernel>(MollifierKernel::standard_bump(field.d));
  const VectorFieldSpec smooth = mollify(field, eps, kernel);
  const ParticleGrid grid = ParticleGrid::lattice(box, n);

  std::vector<std::string> header;
  for (int i = 0; i < field.d; ++i) header.push_back("x" + std::to_string(i));
  for (int i = 0; i < field.d; ++i) header.push_back("b" + std::to_string(i));
  for (int i = 0; i < field.d; ++i) header.push_back("b_eps" + std::to_string(i));
  for (int i = 0; i < field.d; ++i)
    for (int l = 0; l < field.m; ++l) header.push_back("sigma" + std::to_string(i) + std::to_string(l));
  for (int i = 0; i < field.d; ++i)
    for (int l = 0; l < field.m; ++l)
      header.push_back("sigma_eps" + std::to_string(i) + std::to_string(l));
  CsvDoc csv(header);

  double sup_db = 0.0, sup_ds = 0.0;
  for (const Vec& x : grid.points) {
    std::vector<double> row;
    for (int i = 0; i < field.d; ++i) row.push_back(x[i]);
    const Vec b = field.drift(x), be = smooth.drift(x);
    for (int i = 0; i < field.d; ++i) row.push_back(b[i]);
    for (int i = 0; i < field.d; ++i) row.push_back(be[i]);
    const Mat s = field.diffusion(x), se = smooth.diffusion(x);
    for (int i = 0; i < field.d; ++i)
      for (int l = 0; l < field.m; ++l) row.push_back(s(i, l));
    for (int i = 0; i < field.d; ++i)
      for (int l = 0; l < field.m; ++l) row.push_back(se(i, l));
    csv.add_numeric_row(row);
    for (int i = 0; i < field.d; ++i) sup_db = std::max(sup_db, std::abs(be[i] - b[i]));
    for (int i = 0; i < field.d; ++i)
      for (int l = 0; l < field.m; ++l) sup_ds = std::max(sup_ds, std::abs(se(i, l) - s(i, l)));
  }

  Outputs out;
  out.add("field_values.csv", csv.str());
  json summary;
  summary["config_hash"] = hash;
  summary["eps"] = eps;
  summary["points"] = grid.points.size();
  summary["kernel_nodes"] = kernel->nodes.size();
  summary["sup_drift_change"] = sup_db;
  summary["sup_diffusion_change"] = sup_ds;
  out.add("summary.json", dump_json(summary));
  return out;
}

Outputs run_flow(const ExperimentConfig& cfg, const std::string& hash) {
  const VectorFieldSpec field = field_of(cfg);
  const json& k = cfg.knobs;
  const Box box = box_of(k, field.d);
  const auto grid_n = axes_of(k["grid_n"], field.d);
  const int steps = k["steps"].get<int>();
  const auto saves = times_of(k["saves"]);
  const int replicates = k["replicates"].get<int>();
  const Scheme scheme = scheme_from_tag(k["scheme"].get<std::string>());
  const bool tangent = k["tangent"].get<bool>();

  const ParticleGrid grid = ParticleGrid::lattice(box, grid_n);

  std::vector<std::string> header = {"replicate", "particle", "time"};
  for (int i = 0; i < field.d; ++i) header.push_back("x" + std::to_string(i));
  if (tangent) header.push_back("det_tangent");
  CsvDoc csv(header);

  int divergent = 0;
  double sup_norm = 0.0;
  for (int r = 0; r < replicates; ++r) {
    const BrownianPath path =
        make_brownian_path(cfg.seed, static_cast<uint64_t>(r), field.m, steps);
    FlowEnsemble ens = simulate_flow(field, grid, path, saves, scheme, cfg.mode);
    if (tangent) ens = simulate_tangent(field, ens, cfg.mode);
    divergent += ens.divergent_count;
    for (double s : ens.sup_norm) sup_norm = std::max(sup_norm, s);
    for (size_t si = 0; si < ens.save_times.size(); ++si)
      for (size_t p = 0; p < ens.positions[si].size(); ++p) {
        std::vector<double> row = {static_cast<double>(r), static_cast<double>(p),
                                   ens.save_times[si]};
        for (int i = 0; i < field.d; ++i) row.push_back(ens.positions[si][p][i]);
        if (tangent) row.push_back(det(ens.tangent[si][p]));
        csv.add_numeric_row(row);
      }
  }

  Outputs out;
  out.add("trajectories.csv", csv.str());
  json summary;
  summary["config_hash"] = hash;
  summary["particles"] = grid.points.size();
  summary["replicates"] = replicates;
  summary["divergent_count"] = divergent;
  summary["sup_norm"] = sup_norm;
  out.add("summary.json", dump_json(summary));
  return out;
}

Outputs run_density(const ExperimentConfig& cfg, const std::string& hash) {
  const VectorFieldSpec field = field_of(cfg);
  const WeightedMeasure measure = measure_of(cfg);
  const json& k = cfg.knobs;
  const std::string task = k["task"].get<std::string>();
  const Box box = box_of(k, field.d);
  const auto grid_n = axes_of(k["grid_n"], field.d);
  const int steps = k["steps"].get<int>();
  const auto saves = times_of(k["saves"]);
  const int replicates = k["replicates"].get<int>();
  const Scheme scheme = scheme_from_tag(k["scheme"].get<std::string>());
  const int mu_subdiv = k["mu_subdiv"].get<int>();

  const ParticleGrid grid = ParticleGrid::lattice(box, grid_n, measure.lambda);
  std::vector<FlowEnsemble> ensembles;
  for (int r = 0; r < replicates; ++r) {
    const BrownianPath path =
        make_brownian_path(cfg.seed, static_cast<uint64_t>(r), field.m, steps);
    ensembles.push_back(simulate_flow(field, grid, path, saves, scheme, cfg.mode));
  }

  Outputs out;
  json summary;
  summary["config_hash"] = hash;
  summary["task"] = task;

  if (task == "jacobian_bins") {
    BinSpec bins;
    bins.box = k.contains("bin_box_lo")
                   ? Box{vec_of(k["bin_box_lo"]), vec_of(k["bin_box_hi"]), field.d}
                   : box;
    bins.n = axes_of(k["bins"], field.d);
    std::vector<std::string> header = {"time", "bin"};
    for (int i = 0; i < field.d; ++i) header.push_back("center" + std::to_string(i));
    header.insert(header.end(), {"j", "se", "defined", "mu_mass"});
    CsvDoc csv(header);
    json devs = json::array();
    for (size_t si = 0; si < saves.size(); ++si) {
      std::vector<DensityEstimate> parts;
      for (const auto& ens : ensembles)
        parts.push_back(estimate_pushforward(ens, measure, bins, si, mu_subdiv, cfg.mode));
      const DensityEstimate merged = merge_density(parts);
      double max_dev = 0.0;
      for (size_t bi = 0; bi < merged.j.size(); ++bi) {
        const Box bb = bins.bin_box(bi);
        std::vector<double> row = {saves[si], static_cast<double>(bi)};
        for (int i = 0; i < field.d; ++i) row.push_back(0.5 * (bb.lo[i] + bb.hi[i]));
        row.insert(row.end(), {merged.j[bi], merged.se[bi],
                               static_cast<double>(merged.defined[bi]), merged.mu_mass[bi]});
        csv.add_numeric_row(row);
        if (merged.defined[bi]) max_dev = std::max(max_dev, std::abs(merged.j[bi] - 1.0));
      }
      devs.push_back({{"time", saves[si]},
                      {"max_abs_dev_from_one", max_dev},
                      {"captured_mass", merged.captured_mass},
                      {"escaped_mass", merged.escaped_mass}});
    }
    out.add("density_bins.csv", csv.str());
    summary["per_time"] = devs;
  } else if (task == "lp_bound") {
    const double p = k["p"].get<double>();
    const auto quad_n = axes_of(k["quad_n"], field.d);
    const LpBound rhs = lp_bound_rhs(field, measure, p, saves, quad_n, cfg.mode);
    BinSpec bins;
    bins.box = box;
    bins.n = axes_of(k["bins"], field.d);
    CsvDoc csv({"time", "empirical_lp", "rhs", "pass"});
    bool all_ok = true;
    for (size_t si = 0; si < saves.size(); ++si) {
      // E int J^p dmu: per-replicate functionals averaged (merging the J
      // estimates first would lower the p-th moment).
      double empirical = 0.0;
      for (const auto& ens : ensembles)
        empirical +=
            empirical_lp_norm(estimate_pushforward(ens, measure, bins, si, mu_subdiv, cfg.mode), p);
      empirical /= static_cast<double>(ensembles.size());
      const bool ok = !rhs.finite || empirical <= rhs.value;
      all_ok = all_ok && ok;
      csv.add_numeric_row({saves[si], empirical, rhs.value, ok ? 1.0 : 0.0});
    }
    out.add("lp_table.csv", csv.str());
    summary["p"] = p;
    summary["rhs"] = rhs.value;
    summary["rhs_finite"] = rhs.finite;
    summary["all_pass"] = all_ok;
  } else {  // certificate
    const double p = k["p"].get<double>();
    const auto quad_n = axes_of(k["quad_n"], field.d);
    const double t_check = k["t_check"].get<double>();
    size_t save_index = 0;
    for (size_t i = 0; i < saves.size(); ++i)
      if (saves[i] == t_check) save_index = i;
    const FlowCertificate cert =
        check_transport_bound(field, measure, p, certificate_test_functions(field.d), ensembles,
                              save_index, quad_n, cfg.mode);
    CsvDoc csv({"phi", "left", "right", "se_left", "pass"});
    for (const auto& row : cert.rows)
      csv.add_row({row.name, format_double(row.left), format_double(row.right),
                   format_double(row.se_left), row.pass ? "1" : "0"});
    out.add("certificate.csv", csv.str());
    summary["p"] = p;
    summary["kp"] = cert.kp;
    summary["kp_finite"] = cert.kp_finite;
    summary["all_pass"] = cert.all_pass;
    summary["t_check"] = t_check;
  }
  out.add("summary.json", dump_json(summary));
  return out;
}

/// Catalog entries for the audit task's `catalog` switch. Parameters pick the
/// documented defaults plus a nonzero noise block where the default would be
/// trivially constant.
std::vector<std::pair<std::string, std::map<std::string, double>>> audit_catalog() {
  return {
      {"constant", {{"d", 1}, {"m", 1}, {"b0", 0.3}, {"s00", 1.0}}},
      {"linear",
       {{"d", 2}, {"m", 2}, {"a00", -0.5}, {"a01", 0.3}, {"a10", -0.2}, {"a11", 0.1},
        {"s00", 0.4}, {"s11", 0.4}}},
      {"rotation", {{"omega", 1.0}, {"sigma", 0.2}}},
      {"ou", {{"kappa", 1.0}, {"sigma", 1.0}}},
      {"geometric", {{"a", 0.5}, {"s", 0.3}}},
      {"singular_sqrt", {{"scale", 1.0}, {"sigma", 1.0}}},
      {"shear", {}},
      {"sine_diffusion", {{"amp", 0.5}}},
      {"degenerate_xy", {}},
  };
}

Outputs run_stability(const ExperimentConfig& cfg, const std::string& hash) {
  const VectorFieldSpec field = field_of(cfg);
  const json& k = cfg.knobs;
  const std::string task = k["task"].get<std::string>();

  Outputs out;
  json summary;
  summary["config_hash"] = hash;
  summary["task"] = task;

  if (task == "cauchy") {
    const WeightedMeasure measure = measure_of(cfg);
    const Box box = box_of(k, field.d);
    const ParticleGrid grid = ParticleGrid::lattice(box, axes_of(k["grid_n"], field.d),
                                                    measure.lambda);
    std::vector<int> levels;
    for (const auto& v : k["levels"]) levels.push_back(v.get<int>());
    const CauchyStudy study = cauchy_study(
        field, levels, k["delta"].get<double>(), k["radius_ball"].get<double>(),
        k["radius_confine"].get<double>(), measure, k["replicates"].get<int>(), grid,
        k["steps"].get<int>(), cfg.seed, k["monitor"].get<int>(), k["tabulate_n"].get<int>(),
        scheme_from_tag(k["scheme"].get<std::string>()), cfg.mode);
    CsvDoc csv({"level_a", "level_b", "xi_gap", "xi_gap_se", "sq_gap", "sq_gap_se", "log_gap",
                "log_gap_se", "excluded_mass"});
    for (const auto& row : study.rows)
      csv.add_numeric_row({static_cast<double>(row.level_a), static_cast<double>(row.level_b),
                           row.xi_gap_mean, row.xi_gap_se, row.sq_gap_mean, row.sq_gap_se,
                           row.log_gap_mean, row.log_gap_se, row.excluded_mean});
    out.add("cauchy_table.csv", csv.str());
    bool decreasing = true;
    for (size_t i = 1; i + 1 < study.rows.size(); ++i)
      if (study.rows[i].xi_gap_mean >
          study.rows[i - 1].xi_gap_mean + study.rows[i - 1].xi_gap_se)
        decreasing = false;
    summary["consecutive_gaps_decreasing_within_se"] = decreasing;
    summary["delta"] = study.delta;
  } else {  // audit
    const Box box = box_of(k, field.d);
    const double radius = k["radius"].get<double>();
    const size_t pairs_n = static_cast<size_t>(k["pairs"].get<long long>());
    std::vector<std::pair<std::string, std::map<std::string, double>>> targets;
    if (k["catalog"].get<bool>())
      targets = audit_catalog();
    else
      targets.push_back({cfg.field_name, cfg.field_params});
    MaximalOptions opts;
    opts.ladder = k["ladder"].get<int>();
    opts.radial = k["radial"].get<int>();
    opts.angular = k["angular"].get<int>();
    CsvDoc csv({"field", "pairs", "violation_fraction"});
    double worst = 0.0;
    for (const auto& [name, params] : targets) {
      const VectorFieldSpec f = make_field(name, params);
      Box fbox = box;
      if (f.d != field.d) {
        fbox.d = f.d;
        for (int i = 0; i < f.d; ++i) {
          fbox.lo[i] = box.lo[0];
          fbox.hi[i] = box.hi[0];
        }
      }
      const auto pairs = sample_pairs(fbox, radius, pairs_n, cfg.seed);
      const double violation = lipschitz_maximal_check(f, radius, pairs, opts, cfg.mode);
      worst = std::max(worst, violation);
      csv.add_row({name, std::to_string(pairs_n), format_double(violation)});
    }
    out.add("audit.csv", csv.str());
    summary["max_violation_fraction"] = worst;
  }
  out.add("summary.json", dump_json(summary));
  return out;
}

FVGrid coarsen_to(const FVGrid& fine, const std::array<int, kMaxDim>& bins) {
  FVGrid coarse;
  coarse.box = fine.box;
  coarse.n = bins;
  const int d = fine.box.d;
  size_t total = 1;
  for (int i = 0; i < d; ++i) total *= static_cast<size_t>(bins[static_cast<size_t>(i)]);
  coarse.u.assign(total, 0.0);
  const int fx = fine.n[0] / bins[0];
  if (d == 1) {
    for (int c = 0; c < bins[0]; ++c) {
      double acc = 0;
      for (int i = 0; i < fx; ++i) acc += fine.u[static_cast<size_t>(c * fx + i)];
      coarse.u[static_cast<size_t>(c)] = acc / fx;
    }
  } else {
    const int fy = fine.n[1] / bins[1];
    for (int cx = 0; cx < bins[0]; ++cx)
      for (int cy = 0; cy < bins[1]; ++cy) {
        double acc = 0;
        for (int i = 0; i < fx; ++i)
          for (int j = 0; j < fy; ++j)
            acc += fine.u[static_cast<size_t>((cx * fx + i) * fine.n[1] + cy * fy + j)];
        coarse.u[static_cast<size_t>(cx * bins[1] + cy)] = acc / (fx * fy);
      }
  }
  return coarse;
}

Outputs run_fpe(const ExperimentConfig& cfg, const std::string& hash) {
  const VectorFieldSpec field = field_of(cfg);
  const json& k = cfg.knobs;
  const Box box = box_of(k, field.d);
  const auto cells = axes_of(k["cells"], field.d);
  const double dt = k["dt"].get<double>();
  const double t_end = k["t_end"].get<double>();
  const auto save_times = k["save_times"].get<std::vector<double>>();

  const json& ic = k["ic"];
  const std::string ic_name = ic["name"].get<std::string>();
  std::function<double(const Vec&)> phi0_fn;
  Vec ic_mean(field.d);
  double ic_var = 1.0;
  if (ic_name == "gaussian") {
    ic_mean = vec_of(ic["mean"]);
    ic_var = ic["var"].get<double>();
    const Vec mean = ic_mean;
    const double var = ic_var;
    const int d = field.d;
    phi0_fn = [mean, var, d](const Vec& x) {
      double e = 0;
      for (int i = 0; i < d; ++i) e += (x[i] - mean[i]) * (x[i] - mean[i]);
      return std::exp(-e / (2 * var));
    };
  } else {
    phi0_fn = [](const Vec&) { return 1.0; };
  }
  const FVGrid phi0 = FVGrid::from_function(box, cells, phi0_fn);

  FpeOptions opts;
  opts.advection_order = k["advection_order"].get<int>();
  opts.time_order = k["time_order"].get<int>();
  opts.eps_pde = k["eps_pde"].get<double>();
  opts.mode = cfg.mode;
  const FpeResult res = solve_fpe(field, phi0, t_end, dt, save_times, opts);

  std::vector<std::string> header = {"time", "cell"};
  for (int i = 0; i < field.d; ++i) header.push_back("center" + std::to_string(i));
  header.push_back("u");
  CsvDoc csv(header);
  for (size_t si = 0; si < res.save_times.size(); ++si)
    for (size_t c = 0; c < res.snapshots[si].size(); ++c) {
      const Vec x = res.grid.center(c);
      std::vector<double> row = {res.save_times[si], static_cast<double>(c)};
      for (int i = 0; i < field.d; ++i) row.push_back(x[i]);
      row.push_back(res.snapshots[si][c]);
      csv.add_numeric_row(row);
    }

  Outputs out;
  out.add("fv_snapshots.csv", csv.str());

  json compare;
  compare["config_hash"] = hash;
  compare["steps"] = res.steps;
  compare["mass_drift_max"] = res.mass_drift_max;
  compare["mass_drift_per_step"] = res.steps ? res.mass_drift_max / res.steps : 0.0;
  compare["clipped_mass"] = res.clipped_mass;
  compare["boundary_leak"] = res.boundary_leak;

  FVGrid final_grid = res.grid;
  final_grid.u = res.snapshots.back();

  const std::string closed = k["closed_form"].get<std::string>();
  if (closed != "none") {
    // Read the constants off the field itself so defaults can never disagree.
    double mean1 = 0.0, var1 = 1.0;
    const double s = field.diffusion(Vec(0.0))(0, 0);
    if (closed == "heat") {
      const double b0 = field.drift(Vec(0.0))[0];
      mean1 = ic_mean[0] + b0 * t_end;
      var1 = ic_var + s * s * t_end;
    } else {  // ou
      const double kap = -field.drift(Vec(1.0))[0];
      const double vinf = s * s / (2 * kap);
      mean1 = ic_mean[0] * std::exp(-kap * t_end);
      var1 = vinf + (ic_var - vinf) * std::exp(-2 * kap * t_end);
    }
    const double l1_closed = l1_to_function(final_grid, [mean1, var1](const Vec& x) {
      return std::exp(-(x[0] - mean1) * (x[0] - mean1) / (2 * var1)) /
             std::sqrt(2 * M_PI * var1);
    });
    compare["l1_closed_form"] = l1_closed;
  }

  if (k.contains("mc")) {
    const json& mc = k["mc"];
    const auto bins = axes_of(mc["bins"], field.d);
    Vec var_vec(field.d);
    for (int i = 0; i < field.d; ++i) var_vec[i] = ic_var;
    InitialSampler sampler = ic_name == "gaussian" ? gaussian_sampler(field.d, ic_mean, var_vec)
                                                   : uniform_box_sampler(box);
    McHistogram hist =
        mc_histogram(field, sampler, static_cast<uint64_t>(mc["particles"].get<long long>()),
                     t_end, mc["dt"].get<double>(),
                     FVGrid{box, bins, {}}, cfg.seed, cfg.mode);
    std::vector<std::string> mh = {"bin"};
    for (int i = 0; i < field.d; ++i) mh.push_back("center" + std::to_string(i));
    mh.insert(mh.end(), {"u", "se"});
    CsvDoc mcsv(mh);
    FVGrid coarse = coarsen_to(final_grid, bins);
    for (size_t c = 0; c < hist.u.size(); ++c) {
      const Vec x = coarse.center(c);
      std::vector<double> row = {static_cast<double>(c)};
      for (int i = 0; i < field.d; ++i) row.push_back(x[i]);
      row.insert(row.end(), {hist.u[c], hist.se[c]});
      mcsv.add_numeric_row(row);
    }
    out.add("mc_histogram.csv", mcsv.str());
    const L1Report rep = l1_compare(coarse, hist);
    compare["l1_fv_mc"] = rep.l1;
    compare["mc_escaped_fraction"] = hist.escaped_fraction;
    compare["mc_max_abs_z"] = rep.max_abs_z;
    compare["mc_frac_z_above_3"] = rep.frac_z_above_3;
  }
  out.add("compare.json", dump_json(compare));
  return out;
}

Control oscillating_control(int n, int segments, double base) {
  Control c;
  c.m = 1;
  c.values.assign(static_cast<size_t>(segments), Vec(1));
  for (int k = 0; k < segments; ++k)
    c.values[static_cast<size_t>(k)][0] =
        base + std::cos(2.0 * M_PI * n * (k + 0.5) / segments);
  return c;
}

json rate_to_json(const RateEstimate& est, const std::string& hash) {
  json j;
  j["config_hash"] = hash;
  j["description"] = est.description;
  if (std::isfinite(est.value))
    j["value"] = est.value;
  else
    j["value"] = "infinity";
  j["energy"] = est.energy;
  j["residual"] = est.residual;
  j["feasible"] = est.feasible;
  j["iterations"] = est.iterations;
  j["penalty_final"] = est.penalty_final;
  j["grad_norms"] = est.grad_norms;
  return j;
}

std::string control_csv(const Control& h) {
  std::vector<std::string> header = {"k", "t_mid"};
  for (int l = 0; l < h.m; ++l) header.push_back("h" + std::to_string(l));
  CsvDoc csv(header);
  const double dt = h.seg_dt();
  for (int k = 0; k < h.segments(); ++k) {
    std::vector<double> row = {static_cast<double>(k), (k + 0.5) * dt};
    for (int l = 0; l < h.m; ++l) row.push_back(h.values[static_cast<size_t>(k)][l]);
    csv.add_numeric_row(row);
  }
  return csv.str();
}

std::string table_csv(const SmallNoiseTable& tbl) {
  CsvDoc csv({"eps", "hits", "trials", "p_hat", "ci_lo", "ci_hi", "eps_log_p", "usable"});
  for (const auto& r : tbl.rows)
    csv.add_numeric_row({r.eps, static_cast<double>(r.hits), static_cast<double>(r.trials),
                         r.p_hat, r.ci_lo, r.ci_hi, r.eps_log_p, r.usable ? 1.0 : 0.0});
  return csv.str();
}

json table_to_json(const SmallNoiseTable& tbl, const std::string& hash) {
  json j;
  j["config_hash"] = hash;
  j["event"] = tbl.event;
  j["extrapolated"] = tbl.extrapolated;
  j["extrapolation_valid"] = tbl.extrapolation_valid;
  j["two_stage"] = tbl.two_stage;
  return j;
}

RateOptions rate_options_of(const json& o) {
  RateOptions ro;
  ro.max_iters = o["max_iters"].get<int>();
  ro.grad_tol = o["grad_tol"].get<double>();
  ro.penalty0 = o["penalty0"].get<double>();
  ro.stages = o["stages"].get<int>();
  ro.feas_tol = o["feas_tol"].get<double>();
  return ro;
}

Outputs run_ldp(const ExperimentConfig& cfg, const std::string& hash) {
  const VectorFieldSpec field = field_of(cfg);
  const json& k = cfg.knobs;
  const std::string task = k["task"].get<std::string>();
  Outputs out;

  if (task == "rate" || task == "sandwich" || task == "table") {
    const Vec x0 = vec_of(k["x0"]);
    const EventTarget target = parse_target(k["target"], "$.knobs.target", field.d);
    RateEstimate est;
    SmallNoiseTable tbl;
    if (task != "table") {
      est = rate_minimize(field, x0, target, k["segments"].get<int>(),
                          rate_options_of(k["optimizer"]));
      out.add("rate.json", dump_json(rate_to_json(est, hash)));
      out.add("control.csv", control_csv(est.h_star));
    }
    if (task != "rate") {
      tbl = small_noise_mc(field, x0, k["eps_ladder"].get<std::vector<double>>(), target,
                           static_cast<uint64_t>(k["particles"].get<long long>()),
                           k["mc_steps"].get<int>(), cfg.seed, cfg.mode);
      out.add("table.csv", table_csv(tbl));
      out.add("table.json", dump_json(table_to_json(tbl, hash)));
    }
    if (task == "sandwich") {
      const LdpReport rep = ldp_report(est, tbl, k["tol"].get<double>());
      json j;
      j["config_hash"] = hash;
      if (std::isfinite(rep.rate_value))
        j["rate_value"] = rep.rate_value;
      else
        j["rate_value"] = "infinity";
      j["extrapolated"] = rep.extrapolated;
      j["rel_discrepancy"] = rep.rel_discrepancy;
      j["sandwich_consistent"] = rep.sandwich_consistent;
      j["trend_above_rate"] = rep.trend_above_rate;
      j["tol"] = rep.tol;
      j["trend"] = rep.trend;
      out.add("report.json", dump_json(j));
    }
    return out;
  }

  if (task == "laplace") {
    const Vec x0 = vec_of(k["x0"]);
    const json& g = k["g"];
    const std::string gname = g["name"].get<std::string>();
    std::function<double(const std::vector<Vec>&)> g_fn;
    if (gname == "constant") {
      const double c = g["c"].get<double>();
      g_fn = [c](const std::vector<Vec>&) { return c; };
    } else {
      const double shift = g["shift"].get<double>();
      const double cap = g["cap"].get<double>();
      g_fn = [shift, cap](const std::vector<Vec>& path) {
        const double u = path.back()[0] - shift;
        return std::min(u * u, cap);
      };
    }
    const LaplaceEstimate est = laplace_estimate(
        field, x0, g_fn, k["bound"].get<double>(), k["eps"].get<double>(),
        static_cast<uint64_t>(k["particles"].get<long long>()), k["mc_steps"].get<int>(),
        cfg.seed, cfg.mode);
    json j;
    j["config_hash"] = hash;
    j["value"] = est.value;
    j["ess"] = est.ess;
    j["reliable"] = est.reliable;
    j["particles"] = est.particles;
    out.add("laplace.json", dump_json(j));
    return out;
  }

  // weak
  const Vec x0 = vec_of(k["x0"]);
  const int segments = k["control_segments"].get<int>();
  const double base = k["base_level"].get<double>();
  const double ball = k["ball"].get<double>();
  std::vector<Control> family;
  std::vector<int> indices;
  for (const auto& v : k["family_n"]) {
    indices.push_back(v.get<int>());
    family.push_back(oscillating_control(indices.back(), segments, base));
  }
  const Control h = Control::constant(1, Vec(base), segments);
  const auto rows = weak_convergence_check(field, x0, family, indices, h, ball, segments,
                                           cfg.mode);
  CsvDoc csv({"n", "control_gap", "sup_w", "sup_path_gap"});
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& row : rows) {
    csv.add_numeric_row({static_cast<double>(row.index), row.control_gap, row.sup_w,
                         row.sup_path_gap});
    const double lx = std::log(static_cast<double>(row.index));
    const double ly = std::log(std::max(row.sup_path_gap, 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double nn = static_cast<double>(rows.size());
  json j;
  j["config_hash"] = hash;
  j["slope_log_gap_vs_log_n"] =
      nn > 1 ? (nn * sxy - sx * sy) / (nn * sxx - sx * sx) : 0.0;
  out.add("weak_table.csv", csv.str());
  out.add("weak.json", dump_json(j));
  return out;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) fail("$", "expected a JSON object");
  check_keys(doc, "$", {"kind", "note", "field", "measure", "seed", "out", "mode", "knobs"});

  ExperimentConfig cfg;
  cfg.kind = need_str(doc, "kind", "$");
  const auto kinds = {"mollify", "flow", "density", "stability", "fpe", "ldp"};
  if (!one_of(cfg.kind, kinds)) fail("$.kind", "expected one of: " + options_text(kinds));

  const json& f = need(doc, "field", "$");
  if (!f.is_object()) fail("$.field", "expected an object");
  check_keys(f, "$.field", {"name", "params"});
  cfg.field_name = need_str(f, "name", "$.field");
  cfg.field_params =
      f.contains("params") ? parse_params(f["params"], "$.field.params") : decltype(cfg.field_params){};
  VectorFieldSpec field;
  try {
    field = make_field(cfg.field_name, cfg.field_params);
  } catch (const std::exception& e) {
    fail("$.field", e.what());
  }

  bool has_measure = doc.contains("measure");
  if (has_measure) {
    const json& m = doc["measure"];
    if (!m.is_object()) fail("$.measure", "expected an object");
    check_keys(m, "$.measure", {"name", "params"});
    cfg.measure_name = need_str(m, "name", "$.measure");
    cfg.measure_params = m.contains("params") ? parse_params(m["params"], "$.measure.params")
                                              : decltype(cfg.measure_params){};
    try {
      make_measure(cfg.measure_name, cfg.measure_params);
    } catch (const std::exception& e) {
      fail("$.measure", e.what());
    }
  }

  const json& seed = need(doc, "seed", "$");
  if (!seed.is_number_integer() || (seed.is_number_integer() && !seed.is_number_unsigned() &&
                                    seed.get<long long>() < 0))
    fail("$.seed", "expected a nonnegative integer");
  cfg.seed = seed.get<uint64_t>();

  cfg.resolved = doc;
  cfg.resolved.erase("out");  // destination is not part of the experiment identity
  const std::string mode = opt_str(cfg.resolved, "mode", "$", "parallel");
  if (mode == "serial")
    cfg.mode = RunMode::serial;
  else if (mode == "parallel")
    cfg.mode = RunMode::parallel;
  else
    fail("$.mode", "expected serial | parallel");
  if (doc.contains("note")) as_str(doc["note"], "$.note");

  cfg.out_dir = doc.contains("out") ? as_str(doc["out"], "$.out") : "runs/" + cfg.kind;

  json& knobs = cfg.resolved["knobs"];
  if (!doc.contains("knobs")) fail("$", "missing required key 'knobs'");
  if (!knobs.is_object()) fail("$.knobs", "expected an object");
  const std::string kp = "$.knobs";
  if (cfg.kind == "mollify")
    validate_mollify(knobs, field, kp);
  else if (cfg.kind == "flow")
    validate_flow(knobs, field, kp);
  else if (cfg.kind == "density")
    validate_density(knobs, field, has_measure, kp);
  else if (cfg.kind == "stability")
    validate_stability(knobs, field, has_measure, kp);
  else if (cfg.kind == "fpe")
    validate_fpe(knobs, field, kp);
  else
    validate_ldp(knobs, field, kp);

  cfg.knobs = knobs;
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    fail("$", e.what());
  }
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) fail("$", "not valid JSON: " + path);
  return parse_config(doc);
}

json RunManifest::to_json() const {
  json j;
  j["artifact_version"] = version;
  j["config_hash"] = config_hash;
  j["wall_clock_ms"] = wall_ms;
  json outs = json::array();
  for (const auto& [file, sum] : checksums) outs.push_back({{"file", file}, {"fnv1a64", sum}});
  j["outputs"] = outs;
  return j;
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string config_text = dump_json(cfg.resolved);
  const std::string hash = hex64(fnv1a64(config_text));

  Outputs out;
  if (cfg.kind == "mollify")
    out = run_mollify(cfg, hash);
  else if (cfg.kind == "flow")
    out = run_flow(cfg, hash);
  else if (cfg.kind == "density")
    out = run_density(cfg, hash);
  else if (cfg.kind == "stability")
    out = run_stability(cfg, hash);
  else if (cfg.kind == "fpe")
    out = run_fpe(cfg, hash);
  else
    out = run_ldp(cfg, hash);

  out.files.insert(out.files.begin(), {"config.json", config_text});

  RunManifest manifest;
  manifest.version = kArtifactVersion;
  manifest.config_hash = hash;
  const std::filesystem::path dir(cfg.out_dir);
  for (const auto& [name, content] : out.files) {
    manifest.checksums.emplace_back(name, hex64(fnv1a64(content)));
    write_text_file((dir / name).string(), content);
  }
  manifest.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
  write_text_file((dir / "manifest.json").string(), dump_json(manifest.to_json()));
  return manifest;
}

}  // namespace sdeflow
