#include "spp/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "spp/errors.hpp"

namespace spp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    std::size_t used = 0;
    auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<T>(n);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto sz = [&](const char* k, std::size_t RunConfig::*f) {
      t[k] = [f](RunConfig& c, const std::string& key, const std::string& v) { c.*f = parse_unsigned<std::size_t>(key, v); };
    };
    auto real = [&](const char* k, double RunConfig::*f) {
      t[k] = [f](RunConfig& c, const std::string& key, const std::string& v) { c.*f = parse_real(key, v); };
    };
    auto flag = [&](const char* k, bool RunConfig::*f) {
      t[k] = [f](RunConfig& c, const std::string& key, const std::string& v) { c.*f = parse_bool(key, v); };
    };
    auto str = [&](const char* k, std::string RunConfig::*f) {
      t[k] = [f](RunConfig& c, const std::string&, const std::string& v) { c.*f = v; };
    };
    auto dim = [&](const char* k, std::size_t ModelDims::*f) {
      t[k] = [f](RunConfig& c, const std::string& key, const std::string& v) {
        c.model.*f = parse_unsigned<std::size_t>(key, v);
      };
    };
    t["seed"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.seed = parse_unsigned<std::uint64_t>(key, v);
    };
    str("out_dir", &RunConfig::out_dir);
    dim("layers", &ModelDims::layers);
    dim("heads", &ModelDims::heads);
    dim("model_dim", &ModelDims::model_dim);
    dim("qk_dim", &ModelDims::qk_dim);
    dim("v_dim", &ModelDims::v_dim);
    dim("ffn_dim", &ModelDims::ffn_dim);
    dim("classes", &ModelDims::classes);
    t["activation"] = [](RunConfig& c, const std::string&, const std::string& v) {
      try {
        c.model.activation = parse_activation(v);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    };
    sz("samples", &RunConfig::samples);
    sz("tokens", &RunConfig::tokens);
    real("val_fraction", &RunConfig::val_fraction);
    real("separation", &RunConfig::separation);
    real("noise", &RunConfig::noise);
    str("data_csv", &RunConfig::data_csv);
    str("csv_schema", &RunConfig::csv_schema);
    sz("epochs", &RunConfig::epochs);
    real("lr", &RunConfig::lr);
    sz("batch_size", &RunConfig::batch_size);
    real("kappa", &RunConfig::kappa);
    real("alpha", &RunConfig::alpha);
    real("lambda", &RunConfig::lambda);
    real("nu", &RunConfig::nu);
    sz("search_steps", &RunConfig::search_steps);
    sz("snapshot_stride", &RunConfig::snapshot_stride);
    sz("search_batch", &RunConfig::search_batch);
    flag("full_batch", &RunConfig::full_batch);
    t["prox"] = [](RunConfig& c, const std::string&, const std::string& v) {
      try {
        c.prox = parse_prox_variant(v);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    };
    sz("group_size", &RunConfig::group_size);
    real("lip", &RunConfig::lip);
    flag("ria", &RunConfig::ria);
    real("ria_lambda0", &RunConfig::ria_lambda0);
    sz("members", &RunConfig::members);
    sz("finetune_epochs", &RunConfig::finetune_epochs);
    real("finetune_lr", &RunConfig::finetune_lr);
    return t;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string raw;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto hash = raw.find('#');
    auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    try {
      it->second(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(model.layers > 0 && model.heads > 0, "layers and heads must be positive");
  require(model.model_dim > 0 && model.qk_dim > 0 && model.v_dim > 0 && model.ffn_dim > 0, "model widths must be positive");
  require(model.classes >= 2, "classes must be at least 2");
  require(data_csv.empty() ? samples > 0 : !csv_schema.empty(), "samples must be positive (or give csv_schema with data_csv)");
  require(tokens > 0, "tokens must be positive");
  require(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction must lie in (0, 1)");
  require(separation >= 0.0 && noise > 0.0, "separation must be >= 0 and noise > 0");
  require(lr > 0.0 && batch_size > 0, "lr and batch_size must be positive");
  require(kappa > 0.0, "kappa must be positive");
  require(alpha > 0.0, "alpha must be positive");
  require(lambda >= 0.0, "lambda must be non-negative");
  require(nu > 0.0, "nu must be positive");
  require(search_steps > 0 && snapshot_stride > 0, "search_steps and snapshot_stride must be positive");
  require(full_batch || search_batch > 0, "search_batch must be positive");
  require(group_size > 0, "group_size must be positive");
  require(lip >= 0.0, "lip must be non-negative (0 estimates it)");
  require(ria_lambda0 > 0.0, "ria_lambda0 must be positive");
  require(members > 0 && members <= search_steps, "members must lie in [1, search_steps]");
  require(finetune_epochs == 0 || finetune_lr > 0.0, "finetune_lr must be positive");
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "seed=" << seed << "\n";
  o << "out_dir=" << out_dir << "\n";
  o << "layers=" << model.layers << "\nheads=" << model.heads << "\nmodel_dim=" << model.model_dim
    << "\nqk_dim=" << model.qk_dim << "\nv_dim=" << model.v_dim << "\nffn_dim=" << model.ffn_dim
    << "\nclasses=" << model.classes << "\nactivation=" << activation_name(model.activation) << "\n";
  o << "samples=" << samples << "\ntokens=" << tokens << "\nval_fraction=" << fmt(val_fraction)
    << "\nseparation=" << fmt(separation) << "\nnoise=" << fmt(noise) << "\n";
  if (!data_csv.empty()) o << "data_csv=" << data_csv << "\n";
  if (!csv_schema.empty()) o << "csv_schema=" << csv_schema << "\n";
  o << "epochs=" << epochs << "\nlr=" << fmt(lr) << "\nbatch_size=" << batch_size << "\n";
  o << "kappa=" << fmt(kappa) << "\nalpha=" << fmt(alpha) << "\nlambda=" << fmt(lambda) << "\nnu=" << fmt(nu)
    << "\nsearch_steps=" << search_steps << "\nsnapshot_stride=" << snapshot_stride
    << "\nsearch_batch=" << search_batch << "\nfull_batch=" << (full_batch ? "true" : "false")
    << "\nprox=" << prox_variant_name(prox) << "\ngroup_size=" << group_size << "\nlip=" << fmt(lip)
    << "\nria=" << (ria ? "true" : "false") << "\nria_lambda0=" << fmt(ria_lambda0) << "\n";
  o << "members=" << members << "\nfinetune_epochs=" << finetune_epochs << "\nfinetune_lr=" << fmt(finetune_lr)
    << "\n";
  return o.str();
}

HyperParams RunConfig::hyper_params(const MaskLayout& layout) const {
  HyperParams hp;
  hp.kappa = kappa;
  hp.alpha = alpha;
  hp.lambda = lambda;
  hp.nu = nu;
  hp.search_steps = search_steps;
  hp.members = members;
  hp.prox = prox;
  if (prox == ProxVariant::kGroupLasso) hp.groups = GroupPartition::from_layout(layout, group_size);
  hp.validate(layout.total());
  return hp;
}

TrainOptions RunConfig::pretrain_options() const {
  TrainOptions t;
  t.epochs = epochs;
  t.lr = lr;
  t.batch_size = batch_size;
  t.seed = seed;
  return t;
}

TrainOptions RunConfig::finetune_options() const {
  TrainOptions t;
  t.epochs = finetune_epochs;
  t.lr = finetune_lr;
  t.batch_size = batch_size;
  t.seed = seed + 1;
  return t;
}

}  // namespace spp
