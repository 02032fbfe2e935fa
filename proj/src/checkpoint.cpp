#include "emanet/checkpoint.hpp"

#include <fstream>

#include "emanet/binary_io.hpp"

namespace emanet {

void write_checkpoint(std::ostream& os, const ParamStore<float>& params) {
  os.write("EMANETCK", 8);
  binary::write_le(os, kCheckpointVersion);
  binary::write_le(os, static_cast<std::uint32_t>(params.count()));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const std::string& name = params.names()[i];
    const Tensor<float>& t = params.values()[i];
    binary::write_le(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::write_le(os, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) binary::write_le(os, static_cast<std::uint32_t>(d));
    binary::write_le(os, t.ptr(), static_cast<std::size_t>(t.size()));
  }
}

ParamStore<float> read_checkpoint(std::istream& is) {
  binary::expect_magic(is, "EMANETCK");
  const auto version = binary::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw binary::FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto entries = binary::read_le<std::uint32_t>(is);
  ParamStore<float> store;
  for (std::uint32_t e = 0; e < entries; ++e) {
    const auto len = binary::read_le<std::uint32_t>(is);
    if (len == 0 || len > 4096) throw binary::FormatError("bad parameter name length");
    std::string name(len, '\0');
    binary::read_le(is, name.data(), len);
    const auto rank = binary::read_le<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw binary::FormatError("bad rank for " + name);
    Shape shape;
    Index total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = binary::read_le<std::uint32_t>(is);
      if (d == 0) throw binary::FormatError("zero extent in " + name);
      shape.push_back(d);
      total *= d;
      if (total > (Index{1} << 32)) throw binary::FormatError("tensor too large: " + name);
    }
    Tensor<float> t(shape);
    binary::read_le(is, t.ptr(), static_cast<std::size_t>(t.size()));
    store.add(name, std::move(t));
  }
  return store;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_checkpoint(os, params);
  if (!os) throw std::runtime_error("failed writing " + path);
}

ParamStore<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_checkpoint(is);
}

void assign_params(ParamStore<float>& target, const ParamStore<float>& source) {
  if (target.count() != source.count()) {
    throw ConfigError("checkpoint holds " + std::to_string(source.count()) + " tensors, model expects " +
                      std::to_string(target.count()));
  }
  for (std::size_t i = 0; i < source.count(); ++i) {
    const std::string& name = source.names()[i];
    if (!target.contains(name)) throw ConfigError("checkpoint tensor '" + name + "' is not a model parameter");
    Tensor<float>& dst = target.at(name);
    if (dst.shape() != source.values()[i].shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + to_string(source.values()[i].shape()) +
                        ", model expects " + to_string(dst.shape()));
    }
    dst = source.values()[i];
  }
}

}  // namespace emanet
