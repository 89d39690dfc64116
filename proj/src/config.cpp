#include "trajcast/config.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "trajcast/errors.hpp"

namespace trajcast {

namespace {

using json = nlohmann::ordered_json;

void check_keys(const json& obj, const char* section,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ParseError("config: unknown key \"" + item.key() + "\" in " + section);
    }
  }
}

template <typename T>
void get_to_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

}  // namespace

void PipelineConfig::validate() const {
  if (n < 2) throw ConfigError("past window must cover at least 2 frames");
  if (k < 1) throw ConfigError("prediction horizon must be positive");
  if (guide_interval < 1) throw ConfigError("guide interval must be positive");
  if (k % guide_interval != 0) {
    throw ConfigError("guide interval " + std::to_string(guide_interval) +
                      " does not divide the horizon " + std::to_string(k));
  }
  if (mixture_components < 1) throw ConfigError("need at least one mixture component");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (guides_per_sample < 1) throw ConfigError("guides_per_sample must be >= 1");
  if (window_stride < 1) throw ConfigError("window stride must be >= 1");
  if (eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
  if (max_eval_windows < 0) throw ConfigError("max_eval_windows must be >= 0");
  if (synth_agents < 1) throw ConfigError("synth_agents must be >= 1");
  if (!(em.reg > 0.0)) throw ConfigError("em regularization must be > 0");
  if (em.max_iter < 1) throw ConfigError("em max_iter must be >= 1");
  if (!(em.tol > 0.0)) throw ConfigError("em tolerance must be > 0");
  encoder.validate();
  gat.validate();
  cvae_resolved().validate();
}

CvaeConfig PipelineConfig::cvae_resolved() const {
  CvaeConfig cfg = cvae;
  cfg.guide_steps = k / guide_interval;
  cfg.accel_dims = 3;
  return cfg;
}

PipelineConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("config: top level must be an object");

  PipelineConfig c;
  try {
    check_keys(root, "the top level",
               {"n", "k", "guide_interval", "mixture_components", "epochs",
                "learning_rate", "batch_size", "seed", "guides_per_sample",
                "window_stride", "eval_samples", "max_eval_windows", "synth_agents",
                "em", "encoder", "gat", "cvae", "synth", "paths"});
    get_to_if(root, "n", c.n);
    get_to_if(root, "k", c.k);
    get_to_if(root, "guide_interval", c.guide_interval);
    get_to_if(root, "mixture_components", c.mixture_components);
    get_to_if(root, "epochs", c.epochs);
    get_to_if(root, "learning_rate", c.learning_rate);
    get_to_if(root, "batch_size", c.batch_size);
    get_to_if(root, "seed", c.seed);
    get_to_if(root, "guides_per_sample", c.guides_per_sample);
    get_to_if(root, "window_stride", c.window_stride);
    get_to_if(root, "eval_samples", c.eval_samples);
    get_to_if(root, "max_eval_windows", c.max_eval_windows);
    get_to_if(root, "synth_agents", c.synth_agents);

    if (root.contains("em")) {
      const json& em = root.at("em");
      check_keys(em, "em", {"max_iter", "tol", "reg"});
      get_to_if(em, "max_iter", c.em.max_iter);
      get_to_if(em, "tol", c.em.tol);
      get_to_if(em, "reg", c.em.reg);
    }
    if (root.contains("encoder")) {
      const json& enc = root.at("encoder");
      check_keys(enc, "encoder",
                 {"tcn_channels", "tcn_kernel_size", "tcn_dilations", "dropout_rate",
                  "cnn_channels", "cnn_kernel_size"});
      get_to_if(enc, "tcn_channels", c.encoder.tcn_channels);
      get_to_if(enc, "tcn_kernel_size", c.encoder.tcn_kernel_size);
      get_to_if(enc, "tcn_dilations", c.encoder.tcn_dilations);
      get_to_if(enc, "dropout_rate", c.encoder.dropout_rate);
      get_to_if(enc, "cnn_channels", c.encoder.cnn_channels);
      get_to_if(enc, "cnn_kernel_size", c.encoder.cnn_kernel_size);
    }
    if (root.contains("gat")) {
      const json& gat = root.at("gat");
      check_keys(gat, "gat", {"out_dim", "leaky_slope"});
      get_to_if(gat, "out_dim", c.gat.out_dim);
      get_to_if(gat, "leaky_slope", c.gat.leaky_slope);
    }
    if (root.contains("cvae")) {
      const json& cv = root.at("cvae");
      check_keys(cv, "cvae",
                 {"latent_dim", "encoder_widths", "decoder_widths", "mlp_widths",
                  "guide_tcn_channels", "guide_tcn_kernel_size"});
      get_to_if(cv, "latent_dim", c.cvae.latent_dim);
      get_to_if(cv, "encoder_widths", c.cvae.encoder_widths);
      get_to_if(cv, "decoder_widths", c.cvae.decoder_widths);
      get_to_if(cv, "mlp_widths", c.cvae.mlp_widths);
      get_to_if(cv, "guide_tcn_channels", c.cvae.guide_tcn_channels);
      get_to_if(cv, "guide_tcn_kernel_size", c.cvae.guide_tcn_kernel_size);
    }
    if (root.contains("synth")) {
      const json& sy = root.at("synth");
      check_keys(sy, "synth",
                 {"duration_s", "leg_x_km", "leg_y_km", "speed_kms", "base_alt_km",
                  "alt_amp_km", "pos_noise_km", "wind_mean_x", "wind_mean_y",
                  "wind_noise", "wind_drift_km", "size_jitter", "entry_gap_s",
                  "corner_radius_km"});
      get_to_if(sy, "duration_s", c.synth.duration_s);
      get_to_if(sy, "leg_x_km", c.synth.leg_x_km);
      get_to_if(sy, "leg_y_km", c.synth.leg_y_km);
      get_to_if(sy, "speed_kms", c.synth.speed_kms);
      get_to_if(sy, "base_alt_km", c.synth.base_alt_km);
      get_to_if(sy, "alt_amp_km", c.synth.alt_amp_km);
      get_to_if(sy, "pos_noise_km", c.synth.pos_noise_km);
      get_to_if(sy, "wind_mean_x", c.synth.wind_mean_x);
      get_to_if(sy, "wind_mean_y", c.synth.wind_mean_y);
      get_to_if(sy, "wind_noise", c.synth.wind_noise);
      get_to_if(sy, "wind_drift_km", c.synth.wind_drift_km);
      get_to_if(sy, "size_jitter", c.synth.size_jitter);
      get_to_if(sy, "entry_gap_s", c.synth.entry_gap_s);
      get_to_if(sy, "corner_radius_km", c.synth.corner_radius_km);
    }
    if (root.contains("paths")) {
      const json& p = root.at("paths");
      check_keys(p, "paths", {"train_scene", "val_scene", "test_scene", "out_dir"});
      get_to_if(p, "train_scene", c.paths.train_scene);
      get_to_if(p, "val_scene", c.paths.val_scene);
      get_to_if(p, "test_scene", c.paths.test_scene);
      get_to_if(p, "out_dir", c.paths.out_dir);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return c;
}

std::string config_to_json(const PipelineConfig& c) {
  json root;
  root["n"] = c.n;
  root["k"] = c.k;
  root["guide_interval"] = c.guide_interval;
  root["mixture_components"] = c.mixture_components;
  root["epochs"] = c.epochs;
  root["learning_rate"] = c.learning_rate;
  root["batch_size"] = c.batch_size;
  root["seed"] = c.seed;
  root["guides_per_sample"] = c.guides_per_sample;
  root["window_stride"] = c.window_stride;
  root["eval_samples"] = c.eval_samples;
  root["max_eval_windows"] = c.max_eval_windows;
  root["synth_agents"] = c.synth_agents;
  root["em"] = {{"max_iter", c.em.max_iter}, {"tol", c.em.tol}, {"reg", c.em.reg}};
  root["encoder"] = {{"tcn_channels", c.encoder.tcn_channels},
                     {"tcn_kernel_size", c.encoder.tcn_kernel_size},
                     {"tcn_dilations", c.encoder.tcn_dilations},
                     {"dropout_rate", c.encoder.dropout_rate},
                     {"cnn_channels", c.encoder.cnn_channels},
                     {"cnn_kernel_size", c.encoder.cnn_kernel_size}};
  root["gat"] = {{"out_dim", c.gat.out_dim}, {"leaky_slope", c.gat.leaky_slope}};
  root["cvae"] = {{"latent_dim", c.cvae.latent_dim},
                  {"encoder_widths", c.cvae.encoder_widths},
                  {"decoder_widths", c.cvae.decoder_widths},
                  {"mlp_widths", c.cvae.mlp_widths},
                  {"guide_tcn_channels", c.cvae.guide_tcn_channels},
                  {"guide_tcn_kernel_size", c.cvae.guide_tcn_kernel_size}};
  root["synth"] = {{"duration_s", c.synth.duration_s},
                   {"leg_x_km", c.synth.leg_x_km},
                   {"leg_y_km", c.synth.leg_y_km},
                   {"speed_kms", c.synth.speed_kms},
                   {"base_alt_km", c.synth.base_alt_km},
                   {"alt_amp_km", c.synth.alt_amp_km},
                   {"pos_noise_km", c.synth.pos_noise_km},
                   {"wind_mean_x", c.synth.wind_mean_x},
                   {"wind_mean_y", c.synth.wind_mean_y},
                   {"wind_noise", c.synth.wind_noise},
                   {"wind_drift_km", c.synth.wind_drift_km},
                   {"size_jitter", c.synth.size_jitter},
                   {"entry_gap_s", c.synth.entry_gap_s},
                   {"corner_radius_km", c.synth.corner_radius_km}};
  root["paths"] = {{"train_scene", c.paths.train_scene},
                   {"val_scene", c.paths.val_scene},
                   {"test_scene", c.paths.test_scene},
                   {"out_dir", c.paths.out_dir}};
  return root.dump(2) + "\n";
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void save_config(const std::string& path, const PipelineConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << config_to_json(config);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace trajcast
