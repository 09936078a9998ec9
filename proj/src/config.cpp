#include "amcn/config.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include "amcn/errors.hpp"
#include "amcn/hashing.hpp"
#include "json.hpp"

namespace amcn {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object and remembers which keys were used so
// leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidConfig(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), key);
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (v.is_null()) {
      out.reset();
    } else {
      out = convert<T>(v, key);
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw InvalidConfig("unknown key '" + k + "' in " + where_);
    }
  }

 private:
  template <typename T>
  T convert(const json& v, const char* key) const {
    const std::string name = where_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw InvalidConfig(name + " must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw InvalidConfig(name + " must be an integer");
      if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) {
          throw InvalidConfig(name + " is out of range");
        }
        return static_cast<T>(u);
      }
      const auto s = v.get<std::int64_t>();
      if (s < 0 && std::is_unsigned_v<T>) throw InvalidConfig(name + " must be non-negative");
      return static_cast<T>(s);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw InvalidConfig(name + " must be a number");
      return v.get<T>();
    } else {
      if (!v.is_string()) throw InvalidConfig(name + " must be a string");
      return v.get<std::string>();
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_hp(const json& j, HyperParams& hp) {
  ObjectReader r(j, "hp");
  r.get("sigma", hp.sigma);
  r.get("tau0", hp.tau0);
  r.get("tau1", hp.tau1);
  r.get("tau2", hp.tau2);
  r.get("tau3", hp.tau3);
  r.get("lambda", hp.lambda);
  r.get("eps1", hp.eps1);
  r.get("eps2", hp.eps2);
  r.get("eps3", hp.eps3);
  r.get("eps4", hp.eps4);
  r.get("alpha1", hp.alpha1);
  r.get("alpha2", hp.alpha2);
  r.get("alpha3", hp.alpha3);
  r.get("P", hp.P);
  r.get("S", hp.S);
  r.get("Z", hp.Z);
  r.get("n_ip", hp.n_ip);
  r.get("n_lfop", hp.n_lfop);
  r.get("n_laop", hp.n_laop);
  r.get("d_tok", hp.d_tok);
  r.get("per_class_id_prefix", hp.per_class_id_prefix);
  r.finish();
}

void read_optimizer(const json& j, OptimizerConfig& o) {
  ObjectReader r(j, "optimizer");
  r.get("lr", o.lr);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
  r.get("weight_decay", o.weight_decay);
  r.finish();
}

void read_synth(const json& j, SynthConfig& s) {
  ObjectReader r(j, "synth");
  r.get("dim", s.dim);
  r.get("num_id_classes", s.num_id_classes);
  r.get("num_ood_clusters", s.num_ood_clusters);
  r.get("samples_per_class", s.samples_per_class);
  r.get("train_per_class", s.train_per_class);
  r.get("noise_low", s.noise_low);
  r.get("noise_high", s.noise_high);
  r.get("seed", s.seed);
  r.finish();
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json hp_json(const HyperParams& hp) {
  return json{{"sigma", hp.sigma},
              {"tau0", hp.tau0},
              {"tau1", hp.tau1},
              {"tau2", hp.tau2},
              {"tau3", hp.tau3},
              {"lambda", hp.lambda},
              {"eps1", opt_json(hp.eps1)},
              {"eps2", opt_json(hp.eps2)},
              {"eps3", opt_json(hp.eps3)},
              {"eps4", opt_json(hp.eps4)},
              {"alpha1", hp.alpha1},
              {"alpha2", hp.alpha2},
              {"alpha3", hp.alpha3},
              {"P", hp.P},
              {"S", hp.S},
              {"Z", hp.Z},
              {"n_ip", hp.n_ip},
              {"n_lfop", hp.n_lfop},
              {"n_laop", hp.n_laop},
              {"d_tok", opt_json(hp.d_tok)},
              {"per_class_id_prefix", hp.per_class_id_prefix}};
}

json loss_json(const LossReport& r) {
  return json{{"l_c", r.l_c}, {"l_i1", r.l_i1}, {"l_i2", r.l_i2}, {"l1", r.l1},
              {"l2", r.l2},   {"l3", r.l3},     {"l4", r.l4},     {"total", r.total}};
}

double num(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw InvalidConfig(std::string("report field '") + key + "' missing");
  return j.at(key).get<double>();
}

std::optional<double> opt_num(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  ObjectReader r(j, "config");
  auto& t = cfg.train;
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("seed", t.seed);
  r.get("shots", t.shots);
  r.get("checkpoint_every", t.checkpoint_every);
  std::string polarity = to_string(t.polarity);
  r.get("polarity", polarity);
  t.polarity = parse_polarity(polarity);
  if (const json* hp = r.child("hp")) read_hp(*hp, t.hp);
  if (const json* o = r.child("optimizer")) read_optimizer(*o, t.optimizer);
  if (const json* s = r.child("synth")) read_synth(*s, cfg.synth);
  r.finish();
  try {
    t.validate();
    cfg.synth.validate();
  } catch (const InvalidHyperParams& e) {
    throw InvalidConfig(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  const auto& o = t.optimizer;
  const auto& s = cfg.synth;
  json j{{"epochs", t.epochs},
         {"batch_size", t.batch_size},
         {"seed", t.seed},
         {"shots", t.shots},
         {"polarity", to_string(t.polarity)},
         {"checkpoint_every", t.checkpoint_every},
         {"hp", hp_json(t.hp)},
         {"optimizer",
          {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}, {"weight_decay", o.weight_decay}}},
         {"synth",
          {{"dim", s.dim},
           {"num_id_classes", s.num_id_classes},
           {"num_ood_clusters", s.num_ood_clusters},
           {"samples_per_class", s.samples_per_class},
           {"train_per_class", s.train_per_class},
           {"noise_low", s.noise_low},
           {"noise_high", s.noise_high},
           {"seed", s.seed}}}};
  return j.dump();
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(cfg))));
  return buf;
}

std::string to_json(const RunReport& report) {
  json epochs = json::array();
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    json e = loss_json(report.epochs[i]);
    e["epoch"] = i + 1;
    epochs.push_back(std::move(e));
  }
  json metrics = nullptr;
  if (report.metrics) {
    const auto& m = *report.metrics;
    metrics = json{{"auroc", opt_json(m.auroc)},
                   {"fpr95", opt_json(m.fpr95)},
                   {"id_accuracy", m.id_accuracy},
                   {"id_count", m.id_count},
                   {"ood_count", m.ood_count},
                   {"id_rejected", m.id_rejected},
                   {"ood_rejected", m.ood_rejected},
                   {"fixed_threshold", {{"auroc", opt_json(m.fixed_auroc)}, {"fpr95", opt_json(m.fixed_fpr95)}}},
                   {"baseline", {{"auroc", opt_json(m.baseline_auroc)}, {"fpr95", opt_json(m.baseline_fpr95)}}}};
  }
  json stats = json::array();
  for (std::size_t c = 0; c < report.per_class_stats.size(); ++c) {
    const auto& s = report.per_class_stats[c];
    stats.push_back(json{{"class", c},
                         {"mu", s.mu},
                         {"sd", s.sd},
                         {"p_score", s.p_score},
                         {"m_pse", s.m_pse},
                         {"ood_count", s.ood_count}});
  }
  json j{{"config_hash", report.config_hash},
         {"epochs", std::move(epochs)},
         {"metrics", std::move(metrics)},
         {"per_class_stats", std::move(stats)}};
  return j.dump(2) + "\n";
}

RunReport parse_run_report(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(std::string("report is not valid JSON: ") + e.what());
  }
  RunReport r;
  if (!j.contains("config_hash") || !j.at("config_hash").is_string()) {
    throw InvalidConfig("report lacks config_hash");
  }
  r.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& e : j.value("epochs", json::array())) {
    LossReport l;
    l.l_c = num(e, "l_c");
    l.l_i1 = num(e, "l_i1");
    l.l_i2 = num(e, "l_i2");
    l.l1 = num(e, "l1");
    l.l2 = num(e, "l2");
    l.l3 = num(e, "l3");
    l.l4 = num(e, "l4");
    l.total = num(e, "total");
    r.epochs.push_back(l);
  }
  if (j.contains("metrics") && j.at("metrics").is_object()) {
    const auto& m = j.at("metrics");
    EvalMetrics em;
    em.auroc = opt_num(m, "auroc");
    em.fpr95 = opt_num(m, "fpr95");
    em.id_accuracy = num(m, "id_accuracy");
    em.id_count = m.value("id_count", std::size_t{0});
    em.ood_count = m.value("ood_count", std::size_t{0});
    em.id_rejected = m.value("id_rejected", std::size_t{0});
    em.ood_rejected = m.value("ood_rejected", std::size_t{0});
    if (m.contains("fixed_threshold")) {
      em.fixed_auroc = opt_num(m.at("fixed_threshold"), "auroc");
      em.fixed_fpr95 = opt_num(m.at("fixed_threshold"), "fpr95");
    }
    if (m.contains("baseline")) {
      em.baseline_auroc = opt_num(m.at("baseline"), "auroc");
      em.baseline_fpr95 = opt_num(m.at("baseline"), "fpr95");
    }
    r.metrics = em;
  }
  for (const auto& s : j.value("per_class_stats", json::array())) {
    ClassStats cs;
    cs.mu = num(s, "mu");
    cs.sd = num(s, "sd");
    cs.p_score = num(s, "p_score");
    cs.m_pse = num(s, "m_pse");
    cs.ood_count = s.value("ood_count", std::uint64_t{0});
    r.per_class_stats.push_back(cs);
  }
  return r;
}

}  // namespace amcn
