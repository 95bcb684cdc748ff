#include "mmtta/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "mmtta/errors.hpp"

namespace mmtta {
namespace {

// Reads keys off one JSON object and rejects whatever was not consumed.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) {
      throw ValidationError(prefix_.empty() ? "<root>" : prefix_.substr(0, prefix_.size() - 1),
                            "expected a JSON object");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string field(const std::string& key) const { return prefix_ + key; }

  const Json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  const Json& require(const std::string& key) {
    const Json* v = get(key);
    if (!v) throw ValidationError(field(key), "missing required key");
    return *v;
  }

  void number(const std::string& key, double& out) {
    if (const Json* v = get(key)) {
      if (!v->is_number()) throw ValidationError(field(key), "expected a number");
      out = v->get<double>();
    }
  }
  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (const Json* v = get(key)) out = as_integer<Int>(*v, field(key));
  }
  void boolean(const std::string& key, bool& out) {
    if (const Json* v = get(key)) {
      if (!v->is_boolean()) throw ValidationError(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  template <typename Enum, typename Parse>
  void choice(const std::string& key, Enum& out, Parse parse) {
    if (const Json* v = get(key)) {
      if (!v->is_string()) throw ValidationError(field(key), "expected a string");
      try {
        out = parse(v->get<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError(field(key), e.what());
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError(field(it.key()), "unknown key");
    }
  }

  template <typename Int>
  static Int as_integer(const Json& v, const std::string& name) {
    if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
    if (v.is_number_integer()) {
      const auto x = v.get<std::int64_t>();
      if constexpr (std::is_unsigned_v<Int>) {
        if (x < 0) throw ValidationError(name, "must be >= 0");
      }
      return static_cast<Int>(x);
    }
    throw ValidationError(name, "expected an integer");
  }

 private:
  const Json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

Vector parse_vector(const Json& j, const std::string& name) {
  if (!j.is_array()) throw ValidationError(name, "expected an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(name, "expected an array of numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

Matrix parse_matrix(const Json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) throw ValidationError(name, "expected an array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ValidationError(name, "ragged matrix");
    m.row(static_cast<Index>(r)) = parse_vector(j[r], name).transpose();
  }
  return m;
}

Json vector_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

std::string to_string(CorruptionTarget t) {
  switch (t) {
    case CorruptionTarget::None: return "none";
    case CorruptionTarget::M1: return "m1";
    case CorruptionTarget::M2: return "m2";
    case CorruptionTarget::Both: return "both";
  }
  return "none";
}

CorruptionTarget target_from_string(const std::string& s) {
  if (s == "none") return CorruptionTarget::None;
  if (s == "m1") return CorruptionTarget::M1;
  if (s == "m2") return CorruptionTarget::M2;
  if (s == "both") return CorruptionTarget::Both;
  throw ValidationError("target", "expected none, m1, m2 or both");
}

std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::AdditiveGaussian: return "additive-gaussian";
    case CorruptionKind::MeanShift: return "mean-shift";
    case CorruptionKind::Scale: return "scale";
  }
  return "additive-gaussian";
}

CorruptionKind kind_from_string(const std::string& s) {
  if (s == "additive-gaussian") return CorruptionKind::AdditiveGaussian;
  if (s == "mean-shift") return CorruptionKind::MeanShift;
  if (s == "scale") return CorruptionKind::Scale;
  throw ValidationError("kind", "expected additive-gaussian, mean-shift or scale");
}

// Re-throws a validation error with a key prefix.
[[noreturn]] void rethrow_prefixed(const ValidationError& e, const std::string& prefix) {
  const std::string what = e.what();
  const std::string detail = what.substr(std::min(what.size(), e.field().size() + 2));
  throw ValidationError(prefix + e.field(), detail);
}

}  // namespace

std::string to_string(ResponsibilitySource s) { return s == ResponsibilitySource::Source ? "source" : "fused"; }
std::string to_string(BalanceSign s) { return s == BalanceSign::Literal ? "literal" : "flipped"; }
std::string to_string(SklPosteriors s) { return s == SklPosteriors::Gda ? "gda" : "head"; }

ResponsibilitySource responsibility_source_from_string(const std::string& s) {
  if (s == "source") return ResponsibilitySource::Source;
  if (s == "fused") return ResponsibilitySource::Fused;
  throw ValidationError("responsibilities", "expected source or fused");
}

BalanceSign bal_sign_from_string(const std::string& s) {
  if (s == "literal") return BalanceSign::Literal;
  if (s == "flipped") return BalanceSign::Flipped;
  throw ValidationError("bal_sign", "expected literal or flipped");
}

SklPosteriors skl_posteriors_from_string(const std::string& s) {
  if (s == "gda") return SklPosteriors::Gda;
  if (s == "head") return SklPosteriors::Head;
  throw ValidationError("skl_posteriors", "expected gda or head");
}

Json to_json(const AdaptationConfig& c) {
  return Json{{"batch_size", c.batch_size},
              {"lambda", c.lambda},
              {"w_c", c.w_c},
              {"w_g", c.w_g},
              {"w_ra", c.w_ra},
              {"w_bal", c.w_bal},
              {"alpha", c.alpha},
              {"tau", c.tau},
              {"eps_shrink", c.eps_shrink},
              {"lr", c.lr},
              {"responsibilities", to_string(c.responsibility_source)},
              {"bal_sign", to_string(c.bal_sign)},
              {"skl_posteriors", to_string(c.skl_posteriors)},
              {"seed", c.seed},
              {"latent_dim", c.latent_dim},
              {"projection_jitter", c.projection_jitter},
              {"source_samples", c.source_samples},
              {"prefit_epochs", c.prefit_epochs},
              {"prefit_lr", c.prefit_lr}};
}

AdaptationConfig adaptation_config_from_json(const Json& j, const std::string& prefix) {
  AdaptationConfig c;
  ObjectReader r(j, prefix);
  r.integer("batch_size", c.batch_size);
  r.number("lambda", c.lambda);
  r.number("w_c", c.w_c);
  r.number("w_g", c.w_g);
  r.number("w_ra", c.w_ra);
  r.number("w_bal", c.w_bal);
  r.number("alpha", c.alpha);
  r.number("tau", c.tau);
  r.number("eps_shrink", c.eps_shrink);
  r.number("lr", c.lr);
  r.choice("responsibilities", c.responsibility_source, responsibility_source_from_string);
  r.choice("bal_sign", c.bal_sign, bal_sign_from_string);
  r.choice("skl_posteriors", c.skl_posteriors, skl_posteriors_from_string);
  r.integer("seed", c.seed);
  r.integer("latent_dim", c.latent_dim);
  r.number("projection_jitter", c.projection_jitter);
  r.integer("source_samples", c.source_samples);
  r.integer("prefit_epochs", c.prefit_epochs);
  r.number("prefit_lr", c.prefit_lr);
  r.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    rethrow_prefixed(e, prefix);
  }
  return c;
}

Json to_json(const ScenarioSpec& s) {
  Json classes = Json::array();
  for (const ClassConditional& k : s.classes) {
    classes.push_back({{"m1", {{"mean", vector_json(k.mean_m1)}, {"cov", matrix_json(k.cov_m1)}}},
                       {"m2", {{"mean", vector_json(k.mean_m2)}, {"cov", matrix_json(k.cov_m2)}}}});
  }
  Json j{{"num_classes", s.num_classes},
         {"raw_dim_m1", s.raw_dim_m1},
         {"raw_dim_m2", s.raw_dim_m2},
         {"samples", s.samples},
         {"seed", s.seed},
         {"classes", classes},
         {"corruption",
          {{"target", to_string(s.corruption.target)},
           {"kind", to_string(s.corruption.kind)},
           {"severity", s.corruption.severity}}}};
  if (!s.class_prior.empty()) j["class_prior"] = s.class_prior;
  return j;
}

ScenarioSpec scenario_from_json(const Json& j, const std::string& prefix) {
  ScenarioSpec s;
  ObjectReader r(j, prefix);
  r.integer("num_classes", s.num_classes);
  r.integer("raw_dim_m1", s.raw_dim_m1);
  r.integer("raw_dim_m2", s.raw_dim_m2);
  r.integer("samples", s.samples);
  r.integer("seed", s.seed);
  if (const Json* prior = r.get("class_prior")) {
    const Vector v = parse_vector(*prior, r.field("class_prior"));
    s.class_prior.assign(v.data(), v.data() + v.size());
  }
  if (const Json* corruption = r.get("corruption")) {
    ObjectReader c(*corruption, r.field("corruption."));
    c.choice("target", s.corruption.target, target_from_string);
    c.choice("kind", s.corruption.kind, kind_from_string);
    c.number("severity", s.corruption.severity);
    c.finish();
  }

  const Json* classes = r.get("classes");
  const Json* random = r.get("random");
  if (classes && random) throw ValidationError(r.field("classes"), "give either classes or random, not both");
  if (classes) {
    if (!classes->is_array()) throw ValidationError(r.field("classes"), "expected an array");
    for (std::size_t c = 0; c < classes->size(); ++c) {
      const std::string base = r.field("classes[" + std::to_string(c) + "].");
      ObjectReader k((*classes)[c], base);
      ClassConditional cc;
      for (const char* m : {"m1", "m2"}) {
        ObjectReader mod(k.require(m), base + m + ".");
        Vector mean = parse_vector(mod.require("mean"), mod.field("mean"));
        Matrix cov = parse_matrix(mod.require("cov"), mod.field("cov"));
        mod.finish();
        if (std::string(m) == "m1") {
          cc.mean_m1 = std::move(mean);
          cc.cov_m1 = std::move(cov);
        } else {
          cc.mean_m2 = std::move(mean);
          cc.cov_m2 = std::move(cov);
        }
      }
      k.finish();
      s.classes.push_back(std::move(cc));
    }
  } else if (random) {
    RandomScenarioOptions o;
    o.num_classes = s.num_classes;
    if (s.raw_dim_m1 != s.raw_dim_m2) {
      throw ValidationError(r.field("random"), "requires raw_dim_m1 == raw_dim_m2");
    }
    o.raw_dim = s.raw_dim_m1;
    ObjectReader g(*random, r.field("random."));
    g.number("separation", o.separation);
    g.number("within_scale", o.within_scale);
    g.boolean("shared_means", o.shared_means);
    g.integer("class_seed", o.class_seed);
    g.finish();
    if (!(o.within_scale > 0.0)) throw ValidationError(g.field("within_scale"), "must be > 0");
    if (o.num_classes >= 1 && o.raw_dim >= 1) s.classes = random_classes(o);
  } else {
    throw ValidationError(r.field("classes"), "missing: give classes or random");
  }
  r.finish();
  try {
    s.validate();
  } catch (const ValidationError& e) {
    rethrow_prefixed(e, prefix);
  }
  return s;
}

Json to_json(const RunConfig& c) {
  Json j = to_json(c.adapt);
  j["source"] = to_json(c.source);
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("<root>", "expected a JSON object");
  if (!j.contains("source")) throw ValidationError("source", "missing required key");
  Json adapt = j;
  adapt.erase("source");
  RunConfig c;
  c.adapt = adaptation_config_from_json(adapt);
  c.source = scenario_from_json(j.at("source"), "source.");
  if (c.source.corruption.target != CorruptionTarget::None && c.source.corruption.severity != 0.0) {
    throw ValidationError("source.corruption", "source data must be uncorrupted");
  }
  return c;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string(), std::string("malformed JSON: ") + e.what());
  }
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_json_file(path));
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json_file(path));
}

void apply_seed_env(AdaptationConfig& config) {
  const char* env = std::getenv("MMTTA_SEED");
  if (!env) return;
  const std::string s(env);
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s.front() == '-') {
    throw ValidationError("MMTTA_SEED", "expected an unsigned integer, got '" + s + "'");
  }
  config.seed = v;
}

}  // namespace mmtta
