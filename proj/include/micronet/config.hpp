#ifndef MICRONET_CONFIG_HPP
#define MICRONET_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "micronet/errors.hpp"
#include "micronet/graph.hpp"
#include "micronet/train.hpp"

namespace micronet {

// Flat key=value text; '#' starts a comment, blank lines ignored.
inline std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("expected key=value on line " + std::to_string(lineno));
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_kv(buf.str());
}

// Rate lists: sequences separated by ';', rates by ','. E.g. "1,1,2,3;1,1,2,3".
inline std::vector<std::vector<int>> parse_rate_lists(const std::string& text) {
  std::vector<std::vector<int>> lists;
  std::istringstream seqs(text);
  std::string seq;
  while (std::getline(seqs, seq, ';')) {
    std::vector<int> rates;
    std::istringstream rs(seq);
    std::string r;
    while (std::getline(rs, r, ',')) {
      if (!r.empty()) rates.push_back(std::stoi(r));
    }
    if (!rates.empty()) lists.push_back(std::move(rates));
  }
  return lists;
}

inline std::string format_rate_lists(const std::vector<std::vector<int>>& lists) {
  std::ostringstream os;
  for (size_t s = 0; s < lists.size(); ++s) {
    if (s) os << ";";
    for (size_t i = 0; i < lists[s].size(); ++i) {
      if (i) os << ",";
      os << lists[s][i];
    }
  }
  return os.str();
}

// Builds an ArchitectureSpec from key=value fields. `variant` selects a
// preset; any other key overrides a preset field.
inline ArchitectureSpec architecture_from_kv(const std::map<std::string, std::string>& kv) {
  ArchitectureSpec spec;
  auto it = kv.find("variant");
  if (it != kv.end() && it->second != "custom") {
    spec = ArchitectureSpec::from_name(it->second);
  } else {
    spec = ArchitectureSpec::preset(Variant::Custom);
  }
  for (const auto& [key, value] : kv) {
    if (key == "variant") continue;
    if (key == "base_e") spec.base_e = std::stoi(value);
    else if (key == "freq") spec.freq = std::stoi(value);
    else if (key == "squeeze_ratio") spec.squeeze_ratio = std::stod(value);
    else if (key == "p3x3") spec.p3x3 = std::stod(value);
    else if (key == "num_pools") spec.num_pools = std::stoi(value);
    else if (key == "encoder_rates") spec.encoder_rates = parse_rate_lists(value);
    else if (key == "decoder_modules") spec.decoder_modules = std::stoi(value);
    else if (key == "bottleneck_decoder") spec.bottleneck_decoder = value == "1" || value == "true";
    else if (key == "fire_modules") spec.fire_modules = value == "1" || value == "true";
    else if (key == "e_per_module_index") spec.e_per_module_index = value == "1" || value == "true";
    else if (key == "skip_mode") {
      if (value == "add") spec.skip_mode = SkipMode::Add;
      else if (value == "concat") spec.skip_mode = SkipMode::Concat;
      else throw ParamError("skip_mode must be add or concat, got '" + value + "'");
    } else {
      throw ParamError("unknown architecture key '" + key + "'");
    }
  }
  if (kv.count("num_pools") && !kv.count("encoder_rates")) {
    throw ParamError("num_pools override requires encoder_rates");
  }
  spec.validate();
  return spec;
}

// Resolves an --arch argument: a known variant name or a config file path.
inline ArchitectureSpec resolve_architecture(const std::string& arg) {
  if (arg == "micro" || arg == "bm1" || arg == "bm2" || arg == "bm3" || arg == "unet") {
    return ArchitectureSpec::from_name(arg);
  }
  if (std::filesystem::exists(arg)) return architecture_from_kv(parse_kv_file(arg));
  throw ParamError("unknown architecture '" + arg +
                   "' (known variants: micro, bm1, bm2, bm3, unet; or a config file path)");
}

inline std::string architecture_to_kv(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "variant=" << variant_name(spec.variant) << "\n";
  os << "base_e=" << spec.base_e << "\n";
  os << "bottleneck_decoder=" << (spec.bottleneck_decoder ? 1 : 0) << "\n";
  os << "decoder_modules=" << spec.decoder_modules << "\n";
  os << "e_per_module_index=" << (spec.e_per_module_index ? 1 : 0) << "\n";
  os << "encoder_rates=" << format_rate_lists(spec.encoder_rates) << "\n";
  os << "fire_modules=" << (spec.fire_modules ? 1 : 0) << "\n";
  os << "freq=" << spec.freq << "\n";
  os << "num_pools=" << spec.num_pools << "\n";
  os << "p3x3=" << spec.p3x3 << "\n";
  os << "skip_mode=" << (spec.skip_mode == SkipMode::Add ? "add" : "concat") << "\n";
  os << "squeeze_ratio=" << spec.squeeze_ratio << "\n";
  return os.str();
}

// Full run configuration: architecture + training + data settings.
// Resolution order: built-in defaults < config file < command-line flags.
// The resolved snapshot re-parses to itself.
struct RunConfig {
  std::string arch = "micro";
  std::string data_dir;
  std::string out_dir = "run";
  TrainingConfig training;

  static RunConfig resolve(const std::map<std::string, std::string>& file_kv,
                           const std::map<std::string, std::string>& flag_kv) {
    RunConfig cfg;
    auto apply = [&cfg](const std::map<std::string, std::string>& kv) {
      for (const auto& [key, value] : kv) {
        if (key == "arch") cfg.arch = value;
        else if (key == "data_dir") cfg.data_dir = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "learning_rate") cfg.training.learning_rate = std::stod(value);
        else if (key == "momentum") cfg.training.momentum = std::stod(value);
        else if (key == "weight_decay") cfg.training.weight_decay = std::stod(value);
        else if (key == "batch_size") cfg.training.batch_size = std::stoi(value);
        else if (key == "epochs") cfg.training.epochs = std::stoi(value);
        else if (key == "seed") cfg.training.seed = std::stoull(value);
        else throw ParamError("unknown run config key '" + key + "'");
      }
    };
    apply(file_kv);
    apply(flag_kv);
    cfg.training.validate();
    return cfg;
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << "arch=" << arch << "\n";
    os << "batch_size=" << training.batch_size << "\n";
    os << "data_dir=" << data_dir << "\n";
    os << "epochs=" << training.epochs << "\n";
    os << "learning_rate=" << training.learning_rate << "\n";
    os << "momentum=" << training.momentum << "\n";
    os << "out_dir=" << out_dir << "\n";
    os << "seed=" << training.seed << "\n";
    os << "weight_decay=" << training.weight_decay << "\n";
    return os.str();
  }
};

}  // namespace micronet

#endif
