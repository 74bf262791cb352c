#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xfr/model.hpp"

namespace xfr {

/// Per-epoch loss record kept in checkpoint metadata and losses.csv.
struct LossRow {
  int epoch = 0;
  double l_id = 0.0;
  double l_rec = 0.0;
  double total = 0.0;
};

struct TrainMeta {
  int epoch = 0;
  uint64_t seed = 0;
  std::vector<LossRow> loss_history;
};

/// On-disk model state: versioned header, JSON architecture descriptor,
/// then little-endian float32 parameter blobs in declared order
/// (encoder conv weight/bias x4, decoder tconv weight/bias x4, class head).
struct ModelCheckpoint {
  static constexpr uint32_t kVersion = 1;

  ModelArch arch;
  TrainMeta meta;
  std::vector<std::vector<float>> params;

  template <typename T>
  static ModelCheckpoint from_model(TwoStreamModel<T>& model, TrainMeta meta) {
    ModelCheckpoint ck;
    ck.arch = model.arch;
    ck.meta = std::move(meta);
    for (Tensor<T>* p : model.parameters()) {
      std::vector<float> blob(p->values().size());
      for (size_t i = 0; i < blob.size(); ++i)
        blob[i] = static_cast<float>(p->values()[i]);
      ck.params.push_back(std::move(blob));
    }
    return ck;
  }

  template <typename T>
  TwoStreamModel<T> to_model() const {
    TwoStreamModel<T> model = TwoStreamModel<T>::build(arch, /*seed=*/0);
    auto ps = model.parameters();
    if (ps.size() != params.size())
      throw std::runtime_error("checkpoint: descriptor mismatch: " +
                               std::to_string(params.size()) +
                               " blobs for " + std::to_string(ps.size()) +
                               " parameters");
    for (size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->values().size() != params[i].size())
        throw std::runtime_error(
            "checkpoint: descriptor mismatch: parameter " + std::to_string(i) +
            " has " + std::to_string(params[i].size()) + " values, expected " +
            std::to_string(ps[i]->values().size()));
      for (size_t j = 0; j < params[i].size(); ++j)
        ps[i]->values()[j] = static_cast<T>(params[i][j]);
    }
    return model;
  }
};

namespace detail {

static constexpr char kMagic[4] = {'X', 'F', 'R', 'C'};

inline void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v & 0xffffffffULL));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

inline uint64_t get_u64(const unsigned char* p) {
  return static_cast<uint64_t>(get_u32(p)) |
         (static_cast<uint64_t>(get_u32(p + 4)) << 32);
}

inline nlohmann::json arch_to_json(const ModelArch& a) {
  return {{"img_ch", a.img_ch},
          {"input_size", a.input_size},
          {"encoder_widths", a.encoder_widths},
          {"enc_kernel", a.enc_kernel},
          {"enc_stride", a.enc_stride},
          {"enc_padding", a.enc_padding},
          {"dec_kernel", a.dec_kernel},
          {"dec_stride", a.dec_stride},
          {"dec_padding", a.dec_padding},
          {"num_identities", a.num_identities}};
}

inline ModelArch arch_from_json(const nlohmann::json& j) {
  ModelArch a;
  a.img_ch = j.at("img_ch").get<int>();
  a.input_size = j.at("input_size").get<int>();
  a.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  a.enc_kernel = j.at("enc_kernel").get<int>();
  a.enc_stride = j.at("enc_stride").get<int>();
  a.enc_padding = j.at("enc_padding").get<int>();
  a.dec_kernel = j.at("dec_kernel").get<int>();
  a.dec_stride = j.at("dec_stride").get<int>();
  a.dec_padding = j.at("dec_padding").get<int>();
  a.num_identities = j.at("num_identities").get<int>();
  return a;
}

}  // namespace detail

inline void save_checkpoint(const ModelCheckpoint& ck,
                            const std::string& path) {
  nlohmann::json meta = {{"epoch", ck.meta.epoch}, {"seed", ck.meta.seed}};
  nlohmann::json rows = nlohmann::json::array();
  for (const LossRow& r : ck.meta.loss_history)
    rows.push_back({{"epoch", r.epoch},
                    {"l_id", r.l_id},
                    {"l_rec", r.l_rec},
                    {"total", r.total}});
  meta["loss_history"] = rows;
  const std::string descriptor =
      nlohmann::json{{"arch", detail::arch_to_json(ck.arch)}, {"meta", meta}}
          .dump();

  std::string header;
  header.append(detail::kMagic, 4);
  detail::put_u32(header, ModelCheckpoint::kVersion);
  detail::put_u32(header, static_cast<uint32_t>(descriptor.size()));
  header += descriptor;
  uint64_t total = 0;
  for (const auto& blob : ck.params) total += blob.size();
  detail::put_u64(header, total);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& blob : ck.params) {
    std::string bytes;
    bytes.reserve(blob.size() * 4);
    for (float v : blob) {
      uint32_t u;
      std::memcpy(&u, &v, 4);
      detail::put_u32(bytes, u);
    }
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  size_t off = 0;
  auto need = [&](size_t n) {
    if (off + n > bytes.size())
      throw std::runtime_error("checkpoint: truncated file " + path);
  };

  need(4);
  if (std::memcmp(bytes.data(), detail::kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  off = 4;
  need(4);
  const uint32_t version = detail::get_u32(bytes.data() + off);
  off += 4;
  if (version != ModelCheckpoint::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  need(4);
  const uint32_t desc_len = detail::get_u32(bytes.data() + off);
  off += 4;
  need(desc_len);
  nlohmann::json descriptor;
  try {
    descriptor = nlohmann::json::parse(bytes.begin() + static_cast<long>(off),
                                       bytes.begin() +
                                           static_cast<long>(off + desc_len));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad descriptor: ") +
                             e.what());
  }
  off += desc_len;

  ModelCheckpoint ck;
  try {
    ck.arch = detail::arch_from_json(descriptor.at("arch"));
    const auto& meta = descriptor.at("meta");
    ck.meta.epoch = meta.at("epoch").get<int>();
    ck.meta.seed = meta.at("seed").get<uint64_t>();
    for (const auto& r : meta.at("loss_history"))
      ck.meta.loss_history.push_back({r.at("epoch").get<int>(),
                                      r.at("l_id").get<double>(),
                                      r.at("l_rec").get<double>(),
                                      r.at("total").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad descriptor: ") +
                             e.what());
  }
  ck.arch.validate();

  need(8);
  const uint64_t total = detail::get_u64(bytes.data() + off);
  off += 8;
  need(total * 4);
  if (off + total * 4 != bytes.size())
    throw std::runtime_error("checkpoint: trailing bytes in " + path);

  // Blob boundaries are derived from the descriptor.
  TwoStreamModel<float> probe = TwoStreamModel<float>::build(ck.arch, 0);
  uint64_t expected = 0;
  std::vector<size_t> sizes;
  for (Tensor<float>* p : probe.parameters()) {
    sizes.push_back(p->values().size());
    expected += p->values().size();
  }
  if (expected != total)
    throw std::runtime_error(
        "checkpoint: descriptor mismatch: file holds " + std::to_string(total) +
        " floats, descriptor implies " + std::to_string(expected));

  for (size_t sz : sizes) {
    std::vector<float> blob(sz);
    for (size_t i = 0; i < sz; ++i) {
      const uint32_t u = detail::get_u32(bytes.data() + off + i * 4);
      std::memcpy(&blob[i], &u, 4);
    }
    off += sz * 4;
    ck.params.push_back(std::move(blob));
  }
  return ck;
}

}  // namespace xfr
