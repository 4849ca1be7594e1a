// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "atm/common/error.hpp"

namespace atm::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["meta"] = ckpt.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (shape_numel(a.shape) != static_cast<std::int64_t>(a.values.size()))
      throw ShapeError("checkpoint: array '" + a.name + "' shape does not match its data");
    manifest["tensors"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
    offset += a.values.size() * sizeof(float);
  }
  const std::string text = manifest.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + tmp + " for writing");
    os.write(kCheckpointMagic, 8);
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : ckpt.arrays)
      os.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    if (!os) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic in " + path.string());
  const std::uint64_t len = read_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  const auto payload_start = is.tellg();
  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    NamedArray a;
    a.name = t.at("name").get<std::string>();
    a.shape = t.at("shape").get<Shape>();
    const auto count = t.at("count").get<std::uint64_t>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    if (static_cast<std::uint64_t>(shape_numel(a.shape)) != count)
      throw FormatError("checkpoint: array '" + a.name + "' count does not match shape");
    a.values.resize(count);
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    if (!is.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(count * sizeof(float))))
      throw FormatError("checkpoint: truncated payload for '" + a.name + "'");
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void store_parameters(Checkpoint& ckpt, const ParameterSet& params) {
  for (const auto& e : params.entries())
    ckpt.arrays.push_back({e.name, e.tensor.shape(), std::vector<float>(e.tensor.values().begin(), e.tensor.values().end())});
}

void load_parameters(const Checkpoint& ckpt, ParameterSet& params) {
  for (auto& e : params.entries()) {
    const auto* a = ckpt.find(e.name);
    if (!a) throw ShapeError("checkpoint: missing parameter '" + e.name + "'");
    if (a->shape != e.tensor.shape())
      throw ShapeError("checkpoint: parameter '" + e.name + "' has shape " + shape_str(a->shape) + ", model expects " +
                       shape_str(e.tensor.shape()));
    std::copy(a->values.begin(), a->values.end(), e.tensor.values().begin());
  }
}

void store_optimizer(Checkpoint& ckpt, const ParameterSet& params, const OptimizerState& state) {
  ckpt.meta["optimizer_step"] = state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entries()[i];
    ckpt.arrays.push_back({"adam.m/" + e.name, e.tensor.shape(), state.m.at(i)});
    ckpt.arrays.push_back({"adam.v/" + e.name, e.tensor.shape(), state.v.at(i)});
  }
}

bool load_optimizer(const Checkpoint& ckpt, const ParameterSet& params, OptimizerState& state) {
  if (!ckpt.meta.contains("optimizer_step")) return false;
  OptimizerState s;
  s.step = ckpt.meta.at("optimizer_step").get<std::int64_t>();
  for (const auto& e : params.entries()) {
    const auto* m = ckpt.find("adam.m/" + e.name);
    const auto* v = ckpt.find("adam.v/" + e.name);
    if (!m || !v) throw FormatError("checkpoint: optimizer state missing for '" + e.name + "'");
    if (m->shape != e.tensor.shape() || v->shape != e.tensor.shape())
      throw ShapeError("checkpoint: optimizer state shape mismatch for '" + e.name + "'");
    s.m.push_back(m->values);
    s.v.push_back(v->values);
  }
  state = std::move(s);
  return true;
}

}  // namespace atm::nn
