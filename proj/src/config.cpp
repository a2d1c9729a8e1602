// SPDX-License-Identifier: Apache-2.0
#include "melbench/config.hpp"

#include <cmath>
#include <limits>

#include "melbench/checkpoint.hpp"
#include "melbench/error.hpp"

namespace melbench {

namespace {

void sync_model_geometry(RunConfig& cfg) {
  cfg.model.n_mels = static_cast<std::size_t>(std::max(cfg.frontend.n_mels, 0));
  cfg.model.n_frames = cfg.frontend.validate().empty() ? cfg.frontend.target_frames() : 0;
}

}  // namespace

SearchSpace default_search_space() {
  SearchSpace s;
  s.dimensions = {
      Dimension::log_uniform("train.lr", 1e-5, 1e-2),
      Dimension::log_uniform("train.weight_decay", 1e-4, 1e-1),
      Dimension::categorical("train.scheduler", {"none", "exponential"}),
      Dimension::uniform("train.scheduler_base", 0.88, 0.999),
      Dimension::uniform("model.dropout", 0.0, 0.5),
      Dimension::uniform("augment.shift_ratio", 0.0, 0.5),
      Dimension::uniform("augment.noise_ratio", 0.0, 0.2),
      Dimension::uniform("augment.mask_ratio", 0.0, 0.3),
      Dimension::uniform("augment.loudness_ratio", 0.0, 0.5),
  };
  return s;
}

std::vector<std::string> preset_names() { return {"default", "prs", "ccs", "synth-tiny"}; }

RunConfig preset(std::string_view name) {
  RunConfig cfg;
  cfg.preset = std::string(name);
  cfg.search.space = default_search_space();
  if (name == "default" || name == "prs") {
    cfg.model.n_logits = 5;
    cfg.train.task = Task::multiclass;
    cfg.frontend.sample_length = 0.4;
  } else if (name == "ccs") {
    cfg.model.n_logits = 1;
    cfg.train.task = Task::binary;
    cfg.frontend.sample_length = 1.2;
  } else if (name == "synth-tiny") {
    cfg.frontend.n_mels = 32;
    cfg.frontend.sample_length = 0.4;
    cfg.model.n_logits = 1;
    cfg.model.embedding_size = 16;
    cfg.model.lat_dim = 16;
    cfg.model.mlp_dim = 32;
    cfg.model.n_heads = 2;
    cfg.model.n_blocks = 2;
    cfg.model.patch_h = 8;
    cfg.model.patch_w = 8;
    cfg.model.vpatch_width = 5;
    cfg.train.task = Task::binary;
    cfg.train.epochs = 30;
    cfg.train.batch_size = 16;
    cfg.train.lr = 1e-3;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError({"unknown preset '" + std::string(name) + "' (known: " + known + ")"});
  }
  sync_model_geometry(cfg);
  return cfg;
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> p = frontend.validate();
  auto append = [&](std::vector<std::string> more) {
    for (auto& m : more) p.push_back(std::move(m));
  };
  if (p.empty()) append(model.validate());
  append(train.validate());
  append(augment.validate());
  if (train.task == Task::binary && model.n_logits != 1) {
    p.push_back("model.n_logits must be 1 for the binary task, got " + std::to_string(model.n_logits));
  }
  if (paths.out_dir.empty()) p.push_back("paths.out_dir must not be empty");
  if (search.budget < 1) p.push_back("search.budget must be >= 1");
  if (!(search.tpe.gamma > 0.0 && search.tpe.gamma <= 1.0)) p.push_back("search.gamma must be in (0, 1]");
  if (search.tpe.n_candidates < 1) p.push_back("search.n_candidates must be >= 1");
  append(search.space.validate());
  return p;
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["preset"] = cfg.preset;

  const auto& f = cfg.frontend;
  j["frontend"] = {{"sample_rate", f.sample_rate}, {"n_fft", f.n_fft},   {"hop_length", f.hop_length},
                   {"n_mels", f.n_mels},           {"f_min", f.f_min},   {"f_max", f.f_max},
                   {"sample_length", f.sample_length}, {"log_floor", f.log_floor}};

  const auto& m = cfg.model;
  j["model"] = {{"arch", to_string(m.arch)},
                {"n_logits", m.n_logits},
                {"dropout", m.dropout},
                {"embedding_size", m.embedding_size},
                {"lat_dim", m.lat_dim},
                {"mlp_dim", m.mlp_dim},
                {"n_heads", m.n_heads},
                {"head_dim", m.head_dim},
                {"n_blocks", m.n_blocks},
                {"patch_h", m.patch_h},
                {"patch_w", m.patch_w},
                {"vpatch_width", m.vpatch_width},
                {"vpatch_stride", m.vpatch_stride},
                {"attention_scale", to_string(m.attention_scale)},
                {"ssc_bands", m.ssc_bands}};

  const auto& t = cfg.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"scheduler", to_string(t.scheduler)},
                {"scheduler_base", t.scheduler_base},
                {"seed", t.seed},
                {"task", to_string(t.task)},
                {"oversample", t.oversample}};

  const auto& a = cfg.augment;
  j["augment"] = {{"shift_ratio", a.shift_ratio},
                  {"noise_ratio", a.noise_ratio},
                  {"mask_ratio", a.mask_ratio},
                  {"loudness_ratio", a.loudness_ratio}};

  j["paths"] = {{"manifest", cfg.paths.manifest}, {"cache_dir", cfg.paths.cache_dir}, {"out_dir", cfg.paths.out_dir}};

  const auto& s = cfg.search;
  j["search"] = {{"budget", s.budget},
                 {"sampler", to_string(s.sampler)},
                 {"seed", s.seed},
                 {"gamma", s.tpe.gamma},
                 {"n_candidates", s.tpe.n_candidates},
                 {"n_startup", s.tpe.n_startup},
                 {"space", s.space.to_json()}};
  return j;
}

namespace {

class Decoder {
 public:
  Decoder(const nlohmann::json& doc, std::vector<std::string>& problems) : doc_(doc), problems_(problems) {}

  const nlohmann::json* field(const char* section, const char* key) {
    const auto s = doc_.find(section);
    if (s == doc_.end()) return nullptr;
    const auto k = s->find(key);
    return k == s->end() ? nullptr : &*k;
  }

  void number(const char* section, const char* key, double& out) {
    if (const auto* v = field(section, key)) {
      if (v->is_number()) out = v->get<double>();
      else bad(section, key, "a number");
    }
  }

  template <typename Int>
  void count(const char* section, const char* key, Int& out) {
    const auto* v = field(section, key);
    if (v == nullptr) return;
    if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      out = static_cast<Int>(v->get<std::uint64_t>());
    } else if (v->is_number_float() && v->get<double>() >= 0.0 && std::floor(v->get<double>()) == v->get<double>() &&
               v->get<double>() < static_cast<double>(std::numeric_limits<Int>::max())) {
      out = static_cast<Int>(v->get<double>());
    } else {
      bad(section, key, "a non-negative integer");
    }
  }

  void integer(const char* section, const char* key, int& out) {
    const auto* v = field(section, key);
    if (v == nullptr) return;
    if (v->is_number_integer()) out = v->get<int>();
    else bad(section, key, "an integer");
  }

  void flag(const char* section, const char* key, bool& out) {
    if (const auto* v = field(section, key)) {
      if (v->is_boolean()) out = v->get<bool>();
      else bad(section, key, "true or false");
    }
  }

  void text(const char* section, const char* key, std::string& out) {
    if (const auto* v = field(section, key)) {
      if (v->is_string()) out = v->get<std::string>();
      else bad(section, key, "a string");
    }
  }

  template <typename Enum, typename Parser>
  void choice(const char* section, const char* key, Enum& out, Parser parse, const char* allowed) {
    const auto* v = field(section, key);
    if (v == nullptr) return;
    if (!v->is_string() || !parse(v->get<std::string>(), out)) bad(section, key, allowed);
  }

 private:
  void bad(const char* section, const char* key, const char* expected) {
    problems_.push_back(std::string(section) + "." + key + " must be " + expected + ", got " +
                        doc_.at(section).at(key).dump());
  }

  const nlohmann::json& doc_;
  std::vector<std::string>& problems_;
};

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc) {
  std::vector<std::string> problems;
  if (!doc.is_object()) throw ConfigError({"config document must be an object"});

  if (!doc.contains("schema_version")) {
    problems.push_back("schema_version is missing (expected " + std::to_string(kSchemaVersion) + ")");
  } else if (doc["schema_version"] != kSchemaVersion) {
    problems.push_back("schema_version " + doc["schema_version"].dump() + " is not supported (expected " +
                       std::to_string(kSchemaVersion) + ")");
  }

  std::string base_name = "default";
  if (doc.contains("preset")) {
    if (doc["preset"].is_string()) base_name = doc["preset"].get<std::string>();
    else problems.push_back("preset must be a string");
  }
  RunConfig cfg;
  try {
    cfg = preset(base_name);
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) problems.push_back(p);
    cfg = preset("default");
  }

  const nlohmann::json base = to_json(cfg);
  for (const auto& [section, body] : doc.items()) {
    if (section == "schema_version" || section == "preset") continue;
    if (!base.contains(section)) {
      problems.push_back("unknown key '" + section + "'");
      continue;
    }
    if (!body.is_object()) {
      problems.push_back("'" + section + "' must be an object");
      continue;
    }
    for (const auto& [key, value] : body.items()) {
      if (!base[section].contains(key)) problems.push_back("unknown key '" + section + "." + key + "'");
    }
  }

  Decoder d(doc, problems);
  auto& f = cfg.frontend;
  d.integer("frontend", "sample_rate", f.sample_rate);
  d.integer("frontend", "n_fft", f.n_fft);
  d.integer("frontend", "hop_length", f.hop_length);
  d.integer("frontend", "n_mels", f.n_mels);
  d.number("frontend", "f_min", f.f_min);
  d.number("frontend", "f_max", f.f_max);
  d.number("frontend", "sample_length", f.sample_length);
  d.number("frontend", "log_floor", f.log_floor);

  auto& m = cfg.model;
  d.choice("model", "arch", m.arch, parse_arch, "one of cnn, ssc, vit, vvit");
  d.count("model", "n_logits", m.n_logits);
  d.number("model", "dropout", m.dropout);
  d.count("model", "embedding_size", m.embedding_size);
  d.count("model", "lat_dim", m.lat_dim);
  d.count("model", "mlp_dim", m.mlp_dim);
  d.count("model", "n_heads", m.n_heads);
  d.count("model", "head_dim", m.head_dim);
  d.count("model", "n_blocks", m.n_blocks);
  d.count("model", "patch_h", m.patch_h);
  d.count("model", "patch_w", m.patch_w);
  d.count("model", "vpatch_width", m.vpatch_width);
  d.count("model", "vpatch_stride", m.vpatch_stride);
  d.choice("model", "attention_scale", m.attention_scale, parse_attention_scale, "sqrt_dk or sqrt_seq");
  d.count("model", "ssc_bands", m.ssc_bands);

  auto& t = cfg.train;
  d.count("train", "epochs", t.epochs);
  d.count("train", "batch_size", t.batch_size);
  d.number("train", "lr", t.lr);
  d.number("train", "weight_decay", t.weight_decay);
  d.choice("train", "scheduler", t.scheduler, parse_scheduler, "none or exponential");
  d.number("train", "scheduler_base", t.scheduler_base);
  d.count("train", "seed", t.seed);
  d.choice("train", "task", t.task, parse_task, "multiclass or binary");
  d.flag("train", "oversample", t.oversample);

  auto& a = cfg.augment;
  d.number("augment", "shift_ratio", a.shift_ratio);
  d.number("augment", "noise_ratio", a.noise_ratio);
  d.number("augment", "mask_ratio", a.mask_ratio);
  d.number("augment", "loudness_ratio", a.loudness_ratio);

  d.text("paths", "manifest", cfg.paths.manifest);
  d.text("paths", "cache_dir", cfg.paths.cache_dir);
  d.text("paths", "out_dir", cfg.paths.out_dir);

  auto& s = cfg.search;
  d.count("search", "budget", s.budget);
  d.choice("search", "sampler", s.sampler, parse_sampler, "tpe or random");
  d.count("search", "seed", s.seed);
  d.number("search", "gamma", s.tpe.gamma);
  d.count("search", "n_candidates", s.tpe.n_candidates);
  d.count("search", "n_startup", s.tpe.n_startup);
  if (const auto* space = d.field("search", "space")) {
    try {
      s.space = SearchSpace::from_json(*space);
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems()) problems.push_back(p);
    }
  }

  sync_model_geometry(cfg);
  for (auto& p : cfg.validate()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": not valid JSON: " + e.what());
  }
  try {
    return parse_run_config(doc);
  } catch (const ConfigError& e) {
    std::vector<std::string> problems;
    for (const auto& p : e.problems()) problems.push_back(path.string() + ": " + p);
    throw ConfigError(std::move(problems));
  }
}

std::string format_run_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void apply_assignment(nlohmann::json& doc, const Assignment& assignment) {
  for (const auto& [path, value] : assignment.items()) {
    const auto dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size()) {
      throw ConfigError({"search dimension '" + path + "' must be a 'section.key' config path"});
    }
    doc[path.substr(0, dot)][path.substr(dot + 1)] = value;
  }
}

}  // namespace melbench
