#pragma once

// Checkpoint container, little-endian:
//
//   "SACK" | u32 version | string config_text | string config_hash
//   u32 n_params | n_params x (string name | FEAT tensor)
//   u32 has_trainer
//   [ u32 epoch | string rng_state | n_params x (u64 step | FEAT m | FEAT v) ]
//
// config_text is RunConfig::canonical_text(); its FNV-1a hash must match
// config_hash on load. Strings are u32 length + bytes.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>

#include "slotalign/aligner.hpp"
#include "slotalign/binio.hpp"
#include "slotalign/config.hpp"
#include "slotalign/error.hpp"
#include "slotalign/train.hpp"

namespace slotalign::ckpt {

inline constexpr std::array<char, 4> kMagic{'S', 'A', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  RunConfig config;
  align::AlignerModel<float> model;
  std::optional<align::TrainerState> trainer;
};

inline std::string serialize(const RunConfig& cfg, align::AlignerModel<float>& model,
                             const align::TrainerState* trainer = nullptr) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic.data(), kMagic.size());
  binio::put_u32(os, kVersion);
  const std::string text = cfg.canonical_text();
  binio::put_string(os, text);
  binio::put_string(os, binio::hex64(binio::fnv1a(text)));
  const auto params = model.params();
  binio::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    binio::put_string(os, p->name);
    binio::write_tensor(os, p->value);
  }
  binio::put_u32(os, trainer ? 1u : 0u);
  if (trainer) {
    if (trainer->adam.size() != params.size()) throw InvalidInput("checkpoint: optimizer state size mismatch");
    binio::put_u32(os, static_cast<std::uint32_t>(trainer->epoch));
    binio::put_string(os, trainer->rng_state);
    for (const auto& a : trainer->adam) {
      binio::put_u64(os, a.step_count);
      binio::write_tensor(os, a.m);
      binio::write_tensor(os, a.v);
    }
  }
  return os.str();
}

inline void save(const std::filesystem::path& path, const RunConfig& cfg, align::AlignerModel<float>& model,
                 const align::TrainerState* trainer = nullptr) {
  binio::write_file(path, serialize(cfg, model, trainer));
}

inline Checkpoint deserialize(const std::string& bytes, const std::string& origin = "<checkpoint>") {
  std::istringstream is(bytes, std::ios::binary);
  auto offset = [&] {
    is.clear();
    return static_cast<std::size_t>(std::max<std::streamoff>(0, is.tellg()));
  };
  auto fail = [&](const std::string& m) { throw ParseError(offset(), origin + ": " + m); };
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw ParseError(0, origin + ": not a checkpoint file");
  try {
    if (binio::get_u32(is) != kVersion) fail("unsupported checkpoint version");
    const std::string text = binio::get_string(is);
    const std::string hash = binio::get_string(is);
    if (binio::hex64(binio::fnv1a(text)) != hash) {
      fail("config hash mismatch (file corrupt or edited)");
    }
    Checkpoint c{RunConfig::from_text(text), {}, std::nullopt};
    c.model = align::AlignerModel<float>(c.config.model, 0);
    auto params = c.model.params();
    if (binio::get_u32(is) != params.size()) fail("parameter count does not match the configuration");
    for (auto* p : params) {
      const std::string name = binio::get_string(is);
      if (name != p->name) fail("expected parameter " + p->name + ", found " + name);
      auto t = binio::read_tensor(is);
      if (t.size() != p->value.size()) fail("shape mismatch for " + name);
      p->value.values() = std::move(t.values());
    }
    if (binio::get_u32(is)) {
      align::TrainerState st;
      st.epoch = static_cast<int>(binio::get_u32(is));
      st.rng_state = binio::get_string(is);
      nk::AdamHyper h;
      h.lr = c.config.train.lr;
      for (auto* p : params) {
        nk::AdamState<float> a(*p, h);
        a.step_count = binio::get_u64(is);
        auto m = binio::read_tensor(is);
        auto v = binio::read_tensor(is);
        if (m.size() != p->value.size() || v.size() != p->value.size()) {
          fail("optimizer shape mismatch for " + p->name);
        }
        a.m.values() = std::move(m.values());
        a.v.values() = std::move(v.values());
        st.adam.push_back(std::move(a));
      }
      c.trainer = std::move(st);
    }
    is.peek();
    if (!is.eof()) fail("trailing bytes after checkpoint");
    return c;
  } catch (const InvalidInput& e) {
    throw ParseError(offset(), origin + ": " + e.what());
  }
}

inline Checkpoint load(const std::filesystem::path& path) {
  return deserialize(binio::read_file(path), path.string());
}

}  // namespace slotalign::ckpt
