#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "dipper/errors.hpp"
#include "dipper/numerics.hpp"

namespace dipper::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

void save_checkpoint(const std::string& prefix, const ParamVector& params) {
  {
    std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw std::runtime_error("cannot open " + prefix + ".bin for writing");
    bin.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  }
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : params.shape_table) shapes.push_back({{"in", s.in}, {"out", s.out}});
  nlohmann::json meta = {{"dtype", "float64"}, {"count", params.values.size()}, {"shape_table", shapes}};
  std::ofstream js(prefix + ".json", std::ios::trunc);
  if (!js) throw std::runtime_error("cannot open " + prefix + ".json for writing");
  js << meta.dump(2) << '\n';
}

ParamVector load_checkpoint(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw std::runtime_error("cannot open " + prefix + ".json");
  const auto meta = nlohmann::json::parse(js);
  ParamVector p;
  for (const auto& s : meta.at("shape_table")) p.shape_table.push_back({s.at("in").get<int>(), s.at("out").get<int>()});
  const auto count = meta.at("count").get<std::size_t>();
  if (count != ParamVector::expected_size(p.shape_table)) {
    throw ShapeError("checkpoint count does not match its shape table");
  }
  p.values.resize(count);
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + prefix + ".bin");
  bin.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (bin.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw ShapeError("checkpoint " + prefix + ".bin is truncated");
  }
  return p;
}

}  // namespace dipper::nn
