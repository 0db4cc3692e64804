#include "geossl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "geossl/errors.hpp"

namespace geossl {

namespace {

constexpr char kMagic[4] = {'C', 'G', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::vector<std::uint8_t> buf;

  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32_array(const float* p, std::size_t n) { bytes(p, n * 4); }
};

struct Reader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;

  void bytes(void* out, std::size_t k) {
    if (pos + k > n) throw DataError("checkpoint: truncated file");
    std::memcpy(out, p + pos, k);
    pos += k;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t len = u32();
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
};

std::map<std::string, double> config_map(const train::TrainerState& state,
                                         const RunConfig& cfg) {
  std::map<std::string, double> m;
  const vit::ViTConfig& vc = state.student.config;
  m["layers"] = vc.layers;
  m["embed_dim"] = vc.embed_dim;
  m["hidden_dim"] = vc.hidden_dim;
  m["heads"] = vc.heads;
  m["patch_size"] = vc.patch_size;
  m["image_size"] = vc.image_size;
  m["prototypes"] = state.student_class_head.prototypes();
  m["head_hidden"] = state.student_class_head.w1.dim(1);
  m["step"] = static_cast<double>(state.step);
  m["ema_momentum"] = state.ema_m;
  m["tau_teacher"] = state.tau_teacher;
  m["tau_student"] = state.tau_student;
  m["center_lambda"] = state.center_lambda;
  m["sgd_momentum"] = state.opt.momentum();
  m["lr"] = state.opt.lr();
  m["crop_size"] = cfg.global_size;
  m["w_classtoken"] = state.w_classtoken;
  m["w_season"] = state.w_season;
  m["w_patch"] = state.w_patch;
  m["masked_globals_in_classtoken"] = state.masked_in_classtoken ? 1.0 : 0.0;
  return m;
}

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u8(0);  // dtype code 0 = f32
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
  w.f32_array(t.ptr(), t.numel());
}

void write_raw(Writer& w, const std::string& name, const std::vector<float>& v) {
  w.str(name);
  w.u8(0);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.f32_array(v.data(), v.size());
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < size; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const std::string& path, train::TrainerState& state,
                     const RunConfig& cfg) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);

  const auto m = config_map(state, cfg);
  w.u32(static_cast<std::uint32_t>(m.size()));
  for (const auto& [key, value] : m) {
    w.str(key);
    w.f64(value);
  }

  const std::uint32_t k = static_cast<std::uint32_t>(state.center_class.numel());
  w.u32(k);
  w.f32_array(state.center_class.ptr(), k);
  w.f32_array(state.center_patch.ptr(), k);

  const auto rng_state = state.rng.state();
  w.u32(static_cast<std::uint32_t>(rng_state.size()));
  for (std::uint64_t word : rng_state) w.u64(word);

  std::vector<std::pair<std::string, Tensor*>> entries;
  for (auto& [name, t] : state.student_params()) entries.emplace_back("student." + name, t);
  for (auto& [name, t] : state.teacher_params()) entries.emplace_back("teacher." + name, t);

  const auto& velocities = state.opt.velocities();
  const auto student = state.student_params();
  std::uint32_t count = static_cast<std::uint32_t>(entries.size());
  if (!velocities.empty()) count += static_cast<std::uint32_t>(velocities.size());
  w.u32(count);
  for (auto& [name, t] : entries) write_tensor(w, name, *t);
  if (!velocities.empty()) {
    if (velocities.size() != student.size())
      throw std::logic_error("checkpoint: velocity/parameter count mismatch");
    for (std::size_t i = 0; i < velocities.size(); ++i)
      write_raw(w, "velocity." + student[i].first, velocities[i]);
  }

  w.u32(crc32(w.buf.data(), w.buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(reinterpret_cast<const char*>(w.buf.data()),
            static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw DataError("checkpoint: file too small: " + path);

  const std::size_t body = buf.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + body, 4);
  if (crc32(buf.data(), body) != stored_crc)
    throw DataError("checkpoint: checksum mismatch in " + path);

  Reader r{buf.data(), body};
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  if (r.u32() != kVersion) throw DataError("checkpoint: unsupported version in " + path);

  LoadedCheckpoint ckpt;
  const std::uint32_t nconf = r.u32();
  for (std::uint32_t i = 0; i < nconf; ++i) {
    const std::string key = r.str();
    ckpt.config[key] = r.f64();
  }
  auto conf = [&](const std::string& key) {
    auto it = ckpt.config.find(key);
    if (it == ckpt.config.end())
      throw DataError("checkpoint: missing config key '" + key + "'");
    return it->second;
  };

  RunConfig cfg;
  cfg.model = "custom";
  cfg.vit_layers = static_cast<int>(conf("layers"));
  cfg.vit_embed = static_cast<int>(conf("embed_dim"));
  cfg.vit_hidden = static_cast<int>(conf("hidden_dim"));
  cfg.vit_heads = static_cast<int>(conf("heads"));
  cfg.patch_size = static_cast<int>(conf("patch_size"));
  cfg.image_size = static_cast<int>(conf("image_size"));
  cfg.prototypes = static_cast<int>(conf("prototypes"));
  cfg.head_hidden = static_cast<int>(conf("head_hidden"));
  cfg.ema_momentum = conf("ema_momentum");
  cfg.tau_teacher = conf("tau_teacher");
  cfg.tau_student = conf("tau_student");
  cfg.center_lambda = conf("center_lambda");
  cfg.sgd_momentum = conf("sgd_momentum");
  cfg.lr = conf("lr");
  cfg.w_classtoken = conf("w_classtoken");
  cfg.w_season = conf("w_season");
  cfg.w_patch = conf("w_patch");
  cfg.masked_globals_in_classtoken = conf("masked_globals_in_classtoken") != 0.0;
  const int crop = static_cast<int>(conf("crop_size"));
  cfg.global_size = crop;
  cfg.local_size = cfg.patch_size;
  cfg.finalize();

  ckpt.state = train::make_trainer(cfg);
  train::TrainerState& state = ckpt.state;
  state.step = static_cast<std::int64_t>(conf("step"));

  const std::uint32_t k = r.u32();
  if (k != state.center_class.numel())
    throw DataError("checkpoint: center width mismatch");
  r.bytes(state.center_class.ptr(), static_cast<std::size_t>(k) * 4);
  r.bytes(state.center_patch.ptr(), static_cast<std::size_t>(k) * 4);

  const std::uint32_t nrng = r.u32();
  if (nrng != 4) throw DataError("checkpoint: unexpected RNG state size");
  std::array<std::uint64_t, 4> rng_state;
  for (auto& word : rng_state) word = r.u64();
  state.rng.set_state(rng_state);

  std::map<std::string, Tensor*> registry;
  for (auto& [name, t] : state.student_params()) registry["student." + name] = t;
  for (auto& [name, t] : state.teacher_params()) registry["teacher." + name] = t;

  const auto student = state.student_params();
  std::map<std::string, std::size_t> velocity_slot;
  for (std::size_t i = 0; i < student.size(); ++i)
    velocity_slot["velocity." + student[i].first] = i;
  std::vector<std::vector<float>> velocities;

  const std::uint32_t ntensors = r.u32();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    const std::string name = r.str();
    if (r.u8() != 0) throw DataError("checkpoint: unsupported dtype for " + name);
    const std::uint32_t rank = r.u32();
    std::size_t numel = 1;
    std::vector<int> dims(rank);
    for (auto& d : dims) {
      d = static_cast<int>(r.u32());
      numel *= static_cast<std::size_t>(d);
    }
    if (auto slot = velocity_slot.find(name); slot != velocity_slot.end()) {
      if (velocities.empty()) {
        velocities.resize(student.size());
        for (std::size_t j = 0; j < student.size(); ++j)
          velocities[j].assign(student[j].second->numel(), 0.0f);
      }
      if (numel != student[slot->second].second->numel())
        throw DataError("checkpoint: velocity size mismatch for " + name);
      r.bytes(velocities[slot->second].data(), numel * 4);
      continue;
    }
    auto it = registry.find(name);
    if (it == registry.end()) throw DataError("checkpoint: unknown tensor '" + name + "'");
    if (numel != it->second->numel())
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    r.bytes(it->second->ptr(), numel * 4);
  }
  if (!velocities.empty()) state.opt.velocities() = std::move(velocities);
  return ckpt;
}

void check_checkpoint_compatible(const LoadedCheckpoint& ckpt, const RunConfig& cfg) {
  const vit::ViTConfig vc = cfg.vit_config();
  auto expect = [&](const std::string& key, double want) {
    auto it = ckpt.config.find(key);
    if (it == ckpt.config.end() || it->second != want)
      throw ConfigError("checkpoint: '" + key + "' does not match the run config");
  };
  expect("layers", vc.layers);
  expect("embed_dim", vc.embed_dim);
  expect("hidden_dim", vc.hidden_dim);
  expect("heads", vc.heads);
  expect("patch_size", vc.patch_size);
  expect("image_size", vc.image_size);
  expect("prototypes", cfg.prototypes);
  expect("head_hidden", cfg.head_hidden);
}

}  // namespace geossl
