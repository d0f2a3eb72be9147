#include "nbvsdf/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace nbvsdf {

namespace {

using Json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path.string());
  return in;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw Error("write_png: need 1 or 3 channels");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(image.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image.data[i]), 0.0, 1.0);
    bytes[i] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw Error("write_png: " + path.string() + ": " + png.message);
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw Error("read_png: " + path.string() + ": " + png.message);
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr))
    throw Error("read_png: " + path.string() + ": " + png.message);
  Image im(static_cast<int>(png.width), static_cast<int>(png.height), color ? 3 : 1);
  for (std::size_t i = 0; i < bytes.size(); ++i) im.data[i] = static_cast<float>(bytes[i] / 255.0);
  return im;
}

void write_pfm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw Error("write_pfm: need 1 or 3 channels");
  std::ofstream out = open_out(path);
  out << (image.channels == 3 ? "PF" : "Pf") << "\n" << image.width << " " << image.height << "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = image.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(&image.data[static_cast<std::size_t>(y) * row]),
              static_cast<std::streamsize>(row * sizeof(float)));
  if (!out) throw Error("write_pfm: write failed: " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (!in || (magic != "PF" && magic != "Pf") || w <= 0 || h <= 0)
    throw Error("read_pfm: malformed header: " + path.string());
  if (scale > 0.0) throw Error("read_pfm: big-endian PFM not supported: " + path.string());
  Image im(w, h, magic == "PF" ? 3 : 1);
  const std::size_t row = static_cast<std::size_t>(w) * im.channels;
  for (int y = h - 1; y >= 0; --y)
    in.read(reinterpret_cast<char*>(&im.data[static_cast<std::size_t>(y) * row]),
            static_cast<std::streamsize>(row * sizeof(float)));
  if (!in) throw Error("read_pfm: truncated data: " + path.string());
  return im;
}

namespace {

struct TensorRef {
  std::string name;
  std::vector<std::int64_t> shape;
  std::function<void(std::vector<float>&)> save;
  std::function<void(const float*)> load;
};

std::vector<TensorRef> tensors(FieldParams& p) {
  std::vector<TensorRef> out;
  out.push_back({"hash_table",
                 {static_cast<std::int64_t>(p.table_entries()), p.grid.channels},
                 [&p](std::vector<float>& buf) { buf.insert(buf.end(), p.table.begin(), p.table.end()); },
                 [&p](const float* src) { std::copy(src, src + p.table.size(), p.table.begin()); }});
  auto dense = [&out](const std::string& prefix, std::vector<DenseLayer>& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      DenseLayer& layer = layers[l];
      const std::string base = prefix + "." + std::to_string(l);
      out.push_back({base + ".weight",
                     {layer.weight.rows(), layer.weight.cols()},
                     [&layer](std::vector<float>& buf) {
                       for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
                         for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) buf.push_back(layer.weight(r, c));
                     },
                     [&layer](const float* src) {
                       for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
                         for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = *src++;
                     }});
      out.push_back({base + ".bias",
                     {layer.bias.size()},
                     [&layer](std::vector<float>& buf) {
                       buf.insert(buf.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
                     },
                     [&layer](const float* src) { std::copy(src, src + layer.bias.size(), layer.bias.data()); }});
    }
  };
  dense("sdf", p.sdf_decoder);
  dense("color", p.color_decoder);
  out.push_back({"tau_raw", {1}, [&p](std::vector<float>& buf) { buf.push_back(p.tau_raw); },
                 [&p](const float* src) { p.tau_raw = *src; }});
  return out;
}

Json grid_json(const HashGridConfig& g) {
  return {{"levels", g.levels},
          {"channels", g.channels},
          {"table_size", g.table_size},
          {"base_resolution", g.base_resolution},
          {"growth_factor", g.growth_factor},
          {"bounds_min", {g.bounds.min.x(), g.bounds.min.y(), g.bounds.min.z()}},
          {"bounds_max", {g.bounds.max.x(), g.bounds.max.y(), g.bounds.max.z()}}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FieldParams& params, long iteration,
                     double psi) {
  FieldParams& p = const_cast<FieldParams&>(params);  // tensors() only reads through `save`
  Json header;
  header["format"] = "nbvsdf-checkpoint";
  header["version"] = 1;
  header["iteration"] = iteration;
  header["psi"] = psi;
  header["grid"] = grid_json(params.grid);
  header["sdf_hidden"] = params.sdf_decoder.front().weight.rows();
  header["color_hidden"] = params.color_decoder.front().weight.rows();
  std::vector<float> data;
  data.reserve(params.parameter_count());
  for (const TensorRef& t : tensors(p)) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    t.save(data);
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  std::ofstream out = open_out(path);
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw Error("save_checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 24)) throw Error("load_checkpoint: bad header length: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error("load_checkpoint: bad header: " + std::string(e.what()));
  }
  if (header.value("format", "") != "nbvsdf-checkpoint")
    throw Error("load_checkpoint: not a checkpoint: " + path.string());

  HashGridConfig g;
  const Json& gj = header.at("grid");
  g.levels = gj.at("levels");
  g.channels = gj.at("channels");
  g.table_size = gj.at("table_size");
  g.base_resolution = gj.at("base_resolution");
  g.growth_factor = gj.at("growth_factor");
  for (int a = 0; a < 3; ++a) {
    g.bounds.min[a] = gj.at("bounds_min").at(a);
    g.bounds.max[a] = gj.at("bounds_max").at(a);
  }
  FieldInit init;
  init.sdf_hidden = header.at("sdf_hidden");
  init.color_hidden = header.at("color_hidden");
  Checkpoint ck;
  ck.params = FieldParams::initialize(g, 0, init);
  ck.iteration = header.at("iteration");
  ck.psi = header.at("psi");

  std::vector<TensorRef> refs = tensors(ck.params);
  const Json& list = header.at("tensors");
  if (list.size() != refs.size()) throw Error("load_checkpoint: tensor count mismatch");
  std::vector<float> buf;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (list[i].at("name") != refs[i].name || list[i].at("shape").get<std::vector<std::int64_t>>() != refs[i].shape)
      throw Error("load_checkpoint: tensor layout mismatch at " + refs[i].name);
    std::int64_t count = 1;
    for (std::int64_t d : refs[i].shape) count *= d;
    buf.resize(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw Error("load_checkpoint: truncated data: " + path.string());
    refs[i].load(buf.data());
  }
  return ck;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out = open_out(tmp);
    out << text;
    if (!out) throw Error("write_text: write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace nbvsdf
