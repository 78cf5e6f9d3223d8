#pragma once

#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "meshalign/common.hpp"

namespace meshalign {

// Flat key=value run configuration. One struct carries the full pipeline
// (data synthesis, network sizes, training); parsing rejects unknown keys
// and every run re-emits the fully resolved config so no default stays
// implicit.
struct RunConfig {
  // input representation
  Index h = 64, w = 64;          // input resolution
  Index h0 = 4, w0 = 4;          // encoder output grid
  Index c0 = 128;                // encoder output channels
  Index n_j = 17;                // joints of interest (COCO layout)
  double crop_scale = 1.2;
  double heatmap_sigma_px = 0.0;  // 0 = auto (h/64)

  // camera sampling
  double focal_px = 0.0;  // 0 = auto (320 * h / 256)
  double cam_txy_std = 0.05;
  double cam_tz_mean = 2.5;
  double cam_tz_std = 0.25;
  double cam_tz_min = 1.5;

  // body shape sampling (scalar broadcast or 10 comma-separated values)
  std::vector<double> shape_mu{0.0};
  std::vector<double> shape_sigma{1.25};

  // augmentation
  double p_part_drop = 0.2;
  double p_occlusion_box = 0.2;
  double p_joint_jitter = 0.2;
  double jitter_std_px = 0.0;  // 0 = auto (2 * h / 64)
  double box_min_frac = 0.1;
  double box_max_frac = 0.3;
  double vertex_perturb_m = 0.01;
  std::string part_groups =
      "head:23,24;torso:1,2;left_arm:4,16,18,20,22;right_arm:3,15,17,19,21;"
      "left_leg:5,8,10,12,14;right_leg:6,7,9,11,13";

  // assets
  std::string model_path;      // empty = procedural toy model
  Index model_verts = 600;
  Index model_seed = 1;
  std::string pose_bank_path;  // empty = procedural bank
  Index bank_size = 512;

  // network
  std::string arch = "cra";  // cra | concat
  std::string pyramid_channels;  // empty = auto [c0/2, c0/8, 8]
  Index reg_hidden = 512;
  Index reg_iters = 3;
  Index fuse_hidden = 0;  // 0 = auto (fusion input width)
  Index fuse_iters = 3;

  // training
  Index seed = 0;
  Index batch = 16;
  Index steps = 2000;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Index fixed_train_samples = 0;  // >0: train on a frozen set of n samples
  Index eval_every = 200;
  Index eval_samples = 64;
  Index ckpt_every = 500;
  Index log_every = 25;
  bool deterministic = true;
  Index threads = 0;  // 0 = auto in fast mode; deterministic mode is serial
  std::string resume;

  // resolved defaults
  double focal() const { return focal_px > 0 ? focal_px : 320.0 * static_cast<double>(h) / 256.0; }
  double heatmap_sigma() const {
    return heatmap_sigma_px > 0 ? heatmap_sigma_px : static_cast<double>(h) / 64.0;
  }
  double jitter_std() const {
    return jitter_std_px > 0 ? jitter_std_px : 2.0 * static_cast<double>(h) / 64.0;
  }
  std::vector<Index> pyramid() const {
    std::vector<Index> cs;
    if (pyramid_channels.empty()) {
      cs = {std::max<Index>(c0 / 2, 16), std::max<Index>(c0 / 8, 12), 8};
    } else {
      std::stringstream ss(pyramid_channels);
      std::string tok;
      while (std::getline(ss, tok, ',')) cs.push_back(std::stoll(tok));
    }
    MA_CHECK(!cs.empty(), "config: pyramid_channels empty");
    Index prev = c0;
    for (Index c : cs) {
      MA_CHECK(c > 0 && c < prev, "config: pyramid channels must decrease from c0, got "
                                      << pyramid_channels);
      prev = c;
    }
    return cs;
  }

  void validate() const {
    MA_CHECK(h >= 8 && w >= 8 && h0 >= 1 && w0 >= 1 && c0 >= 8, "config: degenerate dims");
    MA_CHECK(h % h0 == 0 && w % w0 == 0, "config: h,w must be multiples of h0,w0");
    Index r = h / h0;
    while (r > 1) {
      MA_CHECK(r % 2 == 0, "config: h/h0 must be a power of two for the stride-2 encoder");
      r /= 2;
    }
    MA_CHECK(h / h0 == w / w0, "config: x and y downsampling factors differ");
    MA_CHECK(n_j >= 1, "config: n_j must be >= 1");
    MA_CHECK(crop_scale >= 1.0, "config: crop_scale must be >= 1");
    MA_CHECK(shape_mu.size() == 1 || shape_mu.size() == 10, "config: shape_mu wants 1 or 10 values");
    MA_CHECK(shape_sigma.size() == 1 || shape_sigma.size() == 10,
             "config: shape_sigma wants 1 or 10 values");
    for (double s : shape_sigma) MA_CHECK(s > 0, "config: shape_sigma must be positive");
    MA_CHECK(arch == "cra" || arch == "concat", "config: arch must be cra or concat");
    MA_CHECK(batch >= 1 && steps >= 0, "config: batch/steps invalid");
    (void)pyramid();
  }

  std::string serialize() const;
  static RunConfig parse_text(const std::string& text);
  static RunConfig parse_file(const std::string& path);
  void write_effective(const std::string& path) const {
    std::ofstream f(path);
    MA_CHECK(f.good(), "config: cannot write '" << path << "'");
    f << serialize();
  }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::vector<ConfigField>& config_fields() {
  static std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto add_i = [&f](const std::string& k, Index RunConfig::* m) {
      f.push_back({k, [m](const RunConfig& c) { return std::to_string(c.*m); },
                   [m, k](RunConfig& c, const std::string& v) {
                     try {
                       c.*m = std::stoll(v);
                     } catch (...) {
                       fail("config: bad integer for " + k + ": '" + v + "'");
                     }
                   }});
    };
    auto add_d = [&f](const std::string& k, double RunConfig::* m) {
      f.push_back({k, [m](const RunConfig& c) { return fmt_double(c.*m); },
                   [m, k](RunConfig& c, const std::string& v) {
                     try {
                       c.*m = std::stod(v);
                     } catch (...) {
                       fail("config: bad number for " + k + ": '" + v + "'");
                     }
                   }});
    };
    auto add_s = [&f](const std::string& k, std::string RunConfig::* m) {
      f.push_back({k, [m](const RunConfig& c) { return c.*m; },
                   [m](RunConfig& c, const std::string& v) { c.*m = v; }});
    };
    auto add_b = [&f](const std::string& k, bool RunConfig::* m) {
      f.push_back({k, [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); },
                   [m, k](RunConfig& c, const std::string& v) {
                     if (v == "true" || v == "1")
                       c.*m = true;
                     else if (v == "false" || v == "0")
                       c.*m = false;
                     else
                       fail("config: bad bool for " + k + ": '" + v + "'");
                   }});
    };
    auto add_dv = [&f](const std::string& k, std::vector<double> RunConfig::* m) {
      f.push_back({k,
                   [m](const RunConfig& c) {
                     std::string s;
                     for (std::size_t i = 0; i < (c.*m).size(); ++i)
                       s += (i ? "," : "") + fmt_double((c.*m)[i]);
                     return s;
                   },
                   [m, k](RunConfig& c, const std::string& v) {
                     (c.*m).clear();
                     std::stringstream ss(v);
                     std::string tok;
                     while (std::getline(ss, tok, ',')) {
                       try {
                         (c.*m).push_back(std::stod(tok));
                       } catch (...) {
                         fail("config: bad number list for " + k + ": '" + v + "'");
                       }
                     }
                   }});
    };

    add_i("h", &RunConfig::h);
    add_i("w", &RunConfig::w);
    add_i("h0", &RunConfig::h0);
    add_i("w0", &RunConfig::w0);
    add_i("c0", &RunConfig::c0);
    add_i("n_j", &RunConfig::n_j);
    add_d("crop_scale", &RunConfig::crop_scale);
    add_d("heatmap_sigma_px", &RunConfig::heatmap_sigma_px);
    add_d("focal_px", &RunConfig::focal_px);
    add_d("cam_txy_std", &RunConfig::cam_txy_std);
    add_d("cam_tz_mean", &RunConfig::cam_tz_mean);
    add_d("cam_tz_std", &RunConfig::cam_tz_std);
    add_d("cam_tz_min", &RunConfig::cam_tz_min);
    add_dv("shape_mu", &RunConfig::shape_mu);
    add_dv("shape_sigma", &RunConfig::shape_sigma);
    add_d("p_part_drop", &RunConfig::p_part_drop);
    add_d("p_occlusion_box", &RunConfig::p_occlusion_box);
    add_d("p_joint_jitter", &RunConfig::p_joint_jitter);
    add_d("jitter_std_px", &RunConfig::jitter_std_px);
    add_d("box_min_frac", &RunConfig::box_min_frac);
    add_d("box_max_frac", &RunConfig::box_max_frac);
    add_d("vertex_perturb_m", &RunConfig::vertex_perturb_m);
    add_s("part_groups", &RunConfig::part_groups);
    add_s("model_path", &RunConfig::model_path);
    add_i("model_verts", &RunConfig::model_verts);
    add_i("model_seed", &RunConfig::model_seed);
    add_s("pose_bank_path", &RunConfig::pose_bank_path);
    add_i("bank_size", &RunConfig::bank_size);
    add_s("arch", &RunConfig::arch);
    add_s("pyramid_channels", &RunConfig::pyramid_channels);
    add_i("reg_hidden", &RunConfig::reg_hidden);
    add_i("reg_iters", &RunConfig::reg_iters);
    add_i("fuse_hidden", &RunConfig::fuse_hidden);
    add_i("fuse_iters", &RunConfig::fuse_iters);
    add_i("seed", &RunConfig::seed);
    add_i("batch", &RunConfig::batch);
    add_i("steps", &RunConfig::steps);
    add_d("lr", &RunConfig::lr);
    add_d("adam_beta1", &RunConfig::adam_beta1);
    add_d("adam_beta2", &RunConfig::adam_beta2);
    add_d("adam_eps", &RunConfig::adam_eps);
    add_i("fixed_train_samples", &RunConfig::fixed_train_samples);
    add_i("eval_every", &RunConfig::eval_every);
    add_i("eval_samples", &RunConfig::eval_samples);
    add_i("ckpt_every", &RunConfig::ckpt_every);
    add_i("log_every", &RunConfig::log_every);
    add_b("deterministic", &RunConfig::deterministic);
    add_i("threads", &RunConfig::threads);
    add_s("resume", &RunConfig::resume);
    return f;
  }();
  return fields;
}

}  // namespace detail

inline std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& f : detail::config_fields()) os << f.key << " = " << f.get(*this) << "\n";
  return os.str();
}

inline RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const char* ws = " \t\r\n";
      const auto b = s.find_first_not_of(ws);
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(ws);
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    MA_CHECK(eq != std::string::npos, "config: line " << lineno << " is not key = value: '"
                                                      << line << "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& f : detail::config_fields()) {
      if (f.key == key) {
        f.set(cfg, val);
        known = true;
        break;
      }
    }
    MA_CHECK(known, "config: unknown key '" << key << "' on line " << lineno);
  }
  return cfg;
}

inline RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  MA_CHECK(f.good(), "config: cannot open '" << path << "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str());
}

}  // namespace meshalign
