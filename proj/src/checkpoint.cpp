#include "voxelformer/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vxf {

namespace {

constexpr char kMagic[4] = {'V', 'X', 'F', 'C'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
uint32_t read_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  require(is.good(), std::string("checkpoint: truncated reading ") + what);
  return v;
}
uint64_t read_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  require(is.good(), std::string("checkpoint: truncated reading ") + what);
  return v;
}

void write_record(std::ostream& os, const std::string& name,
                  const Shape& shape, const std::vector<double>& data) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) write_u64(os, static_cast<uint64_t>(d));
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(8 * data.size()));
}

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

Record read_record(std::istream& is) {
  Record r;
  const uint32_t name_len = read_u32(is, "record name length");
  r.name.resize(name_len);
  is.read(r.name.data(), name_len);
  require(is.good(), "checkpoint: truncated reading record name");
  const uint32_t rank = read_u32(is, "record rank");
  int64_t total = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const int64_t d = static_cast<int64_t>(read_u64(is, "record dim"));
    r.shape.push_back(d);
    total *= d;
  }
  r.data.resize(static_cast<size_t>(total));
  is.read(reinterpret_cast<char*>(r.data.data()),
          static_cast<std::streamsize>(8 * r.data.size()));
  require(is.good(), "checkpoint: truncated reading record data");
  return r;
}

void write_section(std::ostream& os, const ParamList& tensors) {
  write_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors)
    write_record(os, name, t.shape(), t.data());
}

void restore_section(std::istream& is, const ParamList& tensors,
                     const char* section) {
  const uint32_t count = read_u32(is, "section count");
  require(count == tensors.size(),
          std::string("checkpoint: ") + section + " holds " +
              std::to_string(count) + " tensors, model expects " +
              std::to_string(tensors.size()));
  for (uint32_t i = 0; i < count; ++i) {
    Record r = read_record(is);
    const auto& [name, t] = tensors[i];
    require(r.name == name, std::string("checkpoint: ") + section +
                                " record '" + r.name + "' where '" + name +
                                "' expected");
    require(r.shape == t.shape(), "checkpoint: shape mismatch for " + name);
    const_cast<Tensor&>(t).mutable_data() = std::move(r.data);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     const VoxelFormer& model, const Adam* adam,
                     int64_t epoch) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(epoch));
  write_u64(os, adam ? adam->t() : 0);
  const std::string echo = config_to_text(cfg);
  write_u64(os, echo.size());
  os.write(echo.data(), static_cast<std::streamsize>(echo.size()));

  const ParamList params = model.parameters();
  write_section(os, params);
  write_section(os, model.buffers());
  if (adam) {
    write_u32(os, 1);
    Adam& a = *const_cast<Adam*>(adam);
    for (int which = 0; which < 2; ++which) {
      const auto& moments = which == 0 ? a.m() : a.v();
      write_u32(os, static_cast<uint32_t>(moments.size()));
      for (size_t i = 0; i < moments.size(); ++i)
        write_record(os, params[i].first, params[i].second.shape(),
                     moments[i]);
    }
  } else {
    write_u32(os, 0);
  }
  require(os.good(), "checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  require(is.good() && std::memcmp(magic, kMagic, 4) == 0,
          "checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(is, "version");
  require(version == kVersion, "checkpoint: unsupported version " +
                                   std::to_string(version));
  LoadedCheckpoint out;
  out.epoch = read_u32(is, "epoch");
  const uint64_t adam_t = read_u64(is, "adam step");
  const uint64_t echo_len = read_u64(is, "config echo length");
  std::string echo(echo_len, '\0');
  is.read(echo.data(), static_cast<std::streamsize>(echo_len));
  require(is.good(), "checkpoint: truncated config echo");
  out.config = parse_config_text(echo);

  out.model = std::make_unique<VoxelFormer>(out.config.model, out.config.seed);
  const ParamList params = out.model->parameters();
  restore_section(is, params, "parameters");
  restore_section(is, out.model->buffers(), "buffers");
  const uint32_t has_adam = read_u32(is, "optimizer flag");
  if (has_adam) {
    out.adam = std::make_unique<Adam>(out.config.optim, params);
    out.adam->set_t(adam_t);
    for (int which = 0; which < 2; ++which) {
      const uint32_t count = read_u32(is, "moment count");
      require(count == params.size(), "checkpoint: moment count mismatch");
      auto& moments = which == 0 ? out.adam->m() : out.adam->v();
      for (uint32_t i = 0; i < count; ++i) {
        Record r = read_record(is);
        require(r.name == params[i].first,
                "checkpoint: moment record order mismatch at " + r.name);
        moments[i] = std::move(r.data);
      }
    }
  }
  return out;
}

}  // namespace vxf
