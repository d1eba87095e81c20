// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace crosskd {
namespace {

constexpr char kMagic[8] = {'C', 'K', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw ConfigError("checkpoint: truncated archive");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

nlohmann::json header_of(const ModelConfig& c) {
  return {{"n_layers", c.head.n_layers},
          {"hidden_channels", c.head.hidden_channels},
          {"num_classes", c.head.num_classes},
          {"reg_mode", to_string(c.head.reg_mode)},
          {"bin_count", c.head.bin_count},
          {"shared_across_levels", c.head.shared_across_levels},
          {"strides", c.strides()},
          {"in_channels", c.in_channels},
          {"backbone_channels", c.backbone_channels}};
}

ModelConfig config_of(const nlohmann::json& h) {
  ModelConfig c;
  try {
    c.head.n_layers = h.at("n_layers").get<int>();
    c.head.hidden_channels = h.at("hidden_channels").get<int>();
    c.head.num_classes = h.at("num_classes").get<int>();
    c.head.reg_mode = reg_mode_from_string(h.at("reg_mode").get<std::string>());
    c.head.bin_count = h.at("bin_count").get<int>();
    c.head.shared_across_levels = h.at("shared_across_levels").get<bool>();
    c.in_channels = h.at("in_channels").get<int>();
    c.backbone_channels = h.at("backbone_channels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint header: ") + e.what());
  }
  if (h.at("strides").get<std::vector<int>>() != c.strides()) {
    throw ConfigError("checkpoint header: strides inconsistent with backbone depth");
  }
  return c;
}

void put_entry(std::string& out, const std::string& key, const std::vector<std::uint32_t>& dims,
               const std::vector<double>& values) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
  out += key;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put<std::uint32_t>(out, d);
  out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

}  // namespace

std::string serialize_checkpoint(const DetectorModel& model) {
  std::string out(kMagic, sizeof(kMagic));
  const std::string header = header_of(model.config()).dump();
  put<std::uint64_t>(out, header.size());
  out += header;
  std::size_t entries = 0;
  model.params().for_each_layer([&](const std::string&, ParamGroup, const ConvLayer&) { entries += 2; });
  put<std::uint64_t>(out, entries);
  model.params().for_each_layer([&](const std::string& key, ParamGroup, const ConvLayer& l) {
    const auto o = static_cast<std::uint32_t>(l.out_channels);
    const auto i = static_cast<std::uint32_t>(l.in_channels);
    const auto k = static_cast<std::uint32_t>(l.kernel);
    put_entry(out, key + "/weight", {o, i, k, k}, l.weight);
    put_entry(out, key + "/bias", {o}, l.bias);
  });
  return out;
}

DetectorModel deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw ConfigError("checkpoint: bad magic");
  }
  const auto header_len = r.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint header: ") + e.what());
  }
  const ModelConfig config = config_of(header);

  std::map<std::string, std::pair<std::vector<std::uint32_t>, std::vector<double>>> arrays;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string key = r.bytes(r.get<std::uint32_t>());
    std::vector<std::uint32_t> dims(r.get<std::uint32_t>());
    std::size_t n = 1;
    for (auto& d : dims) n *= (d = r.get<std::uint32_t>());
    std::vector<double> values(n);
    const std::string raw = r.bytes(n * sizeof(double));
    std::memcpy(values.data(), raw.data(), raw.size());
    arrays[key] = {std::move(dims), std::move(values)};
  }
  if (!r.done()) throw ConfigError("checkpoint: trailing bytes");

  DetectorParams params = DetectorModel::create(config, 0).params().zeros_like();
  params.for_each_layer([&](const std::string& key, ParamGroup, ConvLayer& l) {
    auto take = [&](const std::string& name, std::vector<double>& dst) {
      auto it = arrays.find(key + "/" + name);
      if (it == arrays.end()) throw ConfigError("checkpoint: missing array " + key + "/" + name);
      if (it->second.second.size() != dst.size())
        throw ConfigError("checkpoint: array " + key + "/" + name + " has wrong size");
      dst = std::move(it->second.second);
      arrays.erase(it);
    };
    take("weight", l.weight);
    take("bias", l.bias);
  });
  if (!arrays.empty()) throw ConfigError("checkpoint: unexpected array " + arrays.begin()->first);
  return make_model_from_params(config, std::move(params));
}

void save_checkpoint(const DetectorModel& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(model);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

DetectorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace crosskd
