#include "affsam/checkpoint.hpp"

#include <cstring>

#include "affsam/config.hpp"
#include "affsam/detail/binary.hpp"
#include "affsam/errors.hpp"
#include "affsam/image_io.hpp"

namespace affsam {

namespace {

constexpr char kMagic[8] = {'A', 'F', 'S', 'A', 'M', 'C', 'K', 'P'};

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

std::string get_string(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  const auto n = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + n > bytes.size()) throw IoError("checkpoint: truncated string");
  std::string s(bytes.begin() + pos, bytes.begin() + pos + n);
  pos += n;
  return s;
}

std::vector<double> get_doubles(std::span<const std::uint8_t> bytes, std::size_t& pos, std::uint64_t n) {
  if (n > (bytes.size() - pos) / 8) throw IoError("checkpoint: truncated tensor data");
  std::vector<double> out(n);
  for (auto& v : out) v = detail::get_le<double>(bytes, pos);
  return out;
}

}  // namespace

bool Checkpoint::has_adaption() const {
  for (const auto& [name, _] : tensors) {
    if (ParameterStore::group_of(name) == "adaption") return true;
  }
  return false;
}

Checkpoint capture_checkpoint(const AffordanceModel& model, const std::string& config_hash, std::uint32_t stage,
                              std::uint32_t epoch, const AdamW* optimizer) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.model_config = to_json(model.config());
  c.stage = stage;
  c.epoch = epoch;
  for (const auto& [name, p] : model.params().all()) {
    c.tensors[name] = TensorBlob{p.shape(), std::vector<double>(p.data().begin(), p.data().end())};
  }
  if (optimizer) {
    c.step = optimizer->steps();
    c.optimizer_step = optimizer->steps();
    c.moments = optimizer->moments();
  }
  return c;
}

void load_parameters(AffordanceModel& model, const Checkpoint& checkpoint) {
  auto& params = model.params();
  if (params.count() != checkpoint.tensors.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(checkpoint.tensors.size()) + " tensors, model has " +
                          std::to_string(params.count()));
  }
  for (const auto& [name, blob] : checkpoint.tensors) {
    if (!params.contains(name)) throw ValidationError("checkpoint tensor '" + name + "' is not a model parameter");
    Tensor p = params.get(name);
    if (p.shape() != blob.shape) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(blob.shape) + ", model expects " +
                           shape_str(p.shape()));
    }
    p.assign(blob.values);
  }
}

AffordanceModel restore_model(const Checkpoint& checkpoint) {
  AffordanceModel model(model_config_from_json(checkpoint.model_config), 0);
  if (checkpoint.has_adaption()) model.attach_adaption(0);
  load_parameters(model, checkpoint);
  return model;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  detail::put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_string(out, c.config_hash);
  put_string(out, c.model_config.dump());
  detail::put_le<std::uint32_t>(out, c.stage);
  detail::put_le<std::uint32_t>(out, c.epoch);
  detail::put_le<std::uint64_t>(out, c.step);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, blob] : c.tensors) {
    if (shape_numel(blob.shape) != blob.values.size()) throw DimensionError("checkpoint: tensor '" + name + "' size mismatch");
    put_string(out, name);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blob.shape.size()));
    for (auto d : blob.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : blob.values) detail::put_le<double>(out, v);
  }
  detail::put_le<std::uint64_t>(out, c.optimizer_step);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.moments.size()));
  for (const auto& [name, mom] : c.moments) {
    if (mom.m.size() != mom.v.size()) throw DimensionError("checkpoint: moment '" + name + "' size mismatch");
    put_string(out, name);
    detail::put_le<std::uint64_t>(out, mom.m.size());
    for (double v : mom.m) detail::put_le<double>(out, v);
    for (double v : mom.v) detail::put_le<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw IoError("checkpoint: bad magic");
  std::size_t pos = 8;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != Checkpoint::kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = get_string(bytes, pos);
  try {
    c.model_config = nlohmann::json::parse(get_string(bytes, pos));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("checkpoint: model config: ") + e.what());
  }
  c.stage = detail::get_le<std::uint32_t>(bytes, pos);
  c.epoch = detail::get_le<std::uint32_t>(bytes, pos);
  c.step = detail::get_le<std::uint64_t>(bytes, pos);
  const auto n_tensors = detail::get_le<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = get_string(bytes, pos);
    TensorBlob blob;
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    if (rank > 8) throw IoError("checkpoint: implausible rank for '" + name + "'");
    for (std::uint32_t d = 0; d < rank; ++d) blob.shape.push_back(detail::get_le<std::uint64_t>(bytes, pos));
    blob.values = get_doubles(bytes, pos, shape_numel(blob.shape));
    c.tensors.emplace(std::move(name), std::move(blob));
  }
  c.optimizer_step = detail::get_le<std::uint64_t>(bytes, pos);
  const auto n_moments = detail::get_le<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    std::string name = get_string(bytes, pos);
    const auto n = detail::get_le<std::uint64_t>(bytes, pos);
    AdamMoments mom;
    mom.m = get_doubles(bytes, pos, n);
    mom.v = get_doubles(bytes, pos, n);
    c.moments.emplace(std::move(name), std::move(mom));
  }
  if (pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_bytes(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace affsam
