#include "sattag/checkpoint.hpp"
#include "sattag/detail/byte_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sattag {

namespace {

constexpr std::string_view kMagic = "ATNTAG";

using detail::ByteReader;
using detail::ByteWriter;
using Kind = CheckpointError::Kind;

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large payloads in pieces.
    while (n > 0) {
        const uInt piece = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, piece);
        data += piece;
        n -= piece;
    }
    return static_cast<std::uint32_t>(crc);
}

void put_vectors(ByteWriter& w, const std::vector<std::vector<double>>& vs) {
    w.u32(static_cast<std::uint32_t>(vs.size()));
    for (const auto& v : vs) {
        w.u64(v.size());
        for (double x : v) w.f64(x);
    }
}

std::vector<std::vector<double>> get_vectors(ByteReader& r) {
    std::vector<std::vector<double>> vs(r.u32());
    for (auto& v : vs) {
        const std::uint64_t n = r.u64();
        if (n > r.remaining() / 8) throw detail::TruncatedInput("vector longer than its section");
        v.resize(n);
        for (double& x : v) x = r.f64();
    }
    return vs;
}

void put_table(ByteWriter& w, const TensorTable& t) {
    w.u32(static_cast<std::uint32_t>(t.names.size()));
    for (std::size_t i = 0; i < t.names.size(); ++i) {
        w.str(t.names[i]);
        w.u32(static_cast<std::uint32_t>(t.shapes[i].size()));
        for (std::size_t d : t.shapes[i]) w.u64(d);
        w.u64(t.values[i].size());
        for (double x : t.values[i]) w.f64(x);
    }
}

TensorTable get_table(ByteReader& r) {
    TensorTable t;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        t.names.push_back(r.str());
        Shape shape(r.u32());
        std::size_t count = 1;
        for (auto& d : shape) {
            d = r.u64();
            count *= d;
        }
        const std::uint64_t stored = r.u64();
        if (stored != count) {
            throw CheckpointError(Kind::Malformed, "tensor '" + t.names.back() + "' stores " + std::to_string(stored) +
                                                       " values for shape " + to_string(shape));
        }
        if (stored > r.remaining() / 8) throw detail::TruncatedInput("tensor longer than its section");
        std::vector<double> values(stored);
        for (double& x : values) x = r.f64();
        t.shapes.push_back(std::move(shape));
        t.values.push_back(std::move(values));
    }
    return t;
}

void put_section(ByteWriter& out, std::string_view id, const ByteWriter& body) {
    out.raw(id);
    out.u64(body.bytes().size());
    out.raw(body.bytes());
    out.u32(crc_of(body.bytes().data(), body.bytes().size()));
}

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

TensorTable TensorTable::capture(const std::vector<NamedTensor>& tensors) {
    TensorTable t;
    for (const auto& nt : tensors) {
        t.names.push_back(nt.name);
        t.shapes.push_back(nt.tensor.shape());
        t.values.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
    }
    return t;
}

void TensorTable::restore_into(std::vector<NamedTensor>& tensors) const {
    if (tensors.size() != names.size()) {
        throw CheckpointError(Kind::Incompatible, "checkpoint holds " + std::to_string(names.size()) +
                                                      " tensors, model has " + std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (tensors[i].name != names[i] || tensors[i].tensor.shape() != shapes[i]) {
            throw CheckpointError(Kind::Incompatible, "checkpoint tensor " + names[i] + " " + to_string(shapes[i]) +
                                                          " does not match model tensor " + tensors[i].name + " " +
                                                          to_string(tensors[i].tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        Tensor t = tensors[i].tensor;
        std::copy(values[i].begin(), values[i].end(), t.data().begin());
    }
}

std::optional<std::string> Checkpoint::find(const std::string& key) const {
    for (const auto& [k, v] : meta) {
        if (k == key) return v;
    }
    return std::nullopt;
}

Checkpoint snapshot(const Model& model) {
    Checkpoint c;
    c.params = TensorTable::capture(model.parameters());
    c.buffers = TensorTable::capture(model.buffers());
    return c;
}

void restore(Model& model, const Checkpoint& ckpt) {
    ckpt.params.restore_into(model.parameters());
    ckpt.buffers.restore_into(model.buffers());
}

std::uint64_t parameter_hash(const TensorTable& table) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < table.names.size(); ++i) {
        h = fnv(h, table.names[i].data(), table.names[i].size());
        for (std::uint64_t d : table.shapes[i]) h = fnv(h, &d, sizeof d);
        h = fnv(h, table.values[i].data(), table.values[i].size() * sizeof(double));
    }
    return h;
}

std::uint64_t parameter_hash(const Model& model) { return parameter_hash(TensorTable::capture(model.parameters())); }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    std::vector<std::pair<std::string_view, ByteWriter>> sections;

    ByteWriter meta;
    meta.u32(static_cast<std::uint32_t>(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        meta.str(k);
        meta.str(v);
    }
    sections.emplace_back("META", std::move(meta));

    ByteWriter stat;
    stat.i64(c.epoch);
    stat.i64(c.best_epoch);
    stat.f64(c.best_val_auroc);
    sections.emplace_back("STAT", std::move(stat));

    ByteWriter parm, buff;
    put_table(parm, c.params);
    put_table(buff, c.buffers);
    sections.emplace_back("PARM", std::move(parm));
    sections.emplace_back("BUFF", std::move(buff));

    if (c.optimizer) {
        ByteWriter optm;
        if (*c.optimizer == OptimizerKind::Adam) {
            optm.u8(0);
            optm.f64(c.adam.lr);
            optm.f64(c.adam.beta1);
            optm.f64(c.adam.beta2);
            optm.f64(c.adam.epsilon);
            optm.i64(c.adam.t);
            put_vectors(optm, c.adam.m);
            put_vectors(optm, c.adam.v);
        } else {
            optm.u8(1);
            optm.f64(c.sgd.lr);
            optm.f64(c.sgd.momentum);
            optm.u8(c.sgd.nesterov ? 1 : 0);
            put_vectors(optm, c.sgd.velocity);
        }
        sections.emplace_back("OPTM", std::move(optm));
    }
    if (!c.best_params.empty()) {
        ByteWriter bprm, bbuf;
        put_table(bprm, c.best_params);
        put_table(bbuf, c.best_buffers);
        sections.emplace_back("BPRM", std::move(bprm));
        sections.emplace_back("BBUF", std::move(bbuf));
    }

    ByteWriter out;
    out.raw(kMagic);
    out.u32(c.version);
    out.u32(static_cast<std::uint32_t>(sections.size()));
    for (const auto& [id, body] : sections) put_section(out, id, body);
    return std::move(out.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kMagic.size() ||
        std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
        throw CheckpointError(Kind::BadMagic, "not a checkpoint: missing ATNTAG magic");
    }
    ByteReader r(bytes.data(), bytes.size());
    Checkpoint c;
    try {
        r.take(kMagic.size());
        c.version = r.u32();
        if (c.version != kCheckpointVersion) {
            throw CheckpointError(Kind::UnsupportedVersion, "checkpoint format version " + std::to_string(c.version) +
                                                                " is not supported (expected " +
                                                                std::to_string(kCheckpointVersion) + ")");
        }
        const std::uint32_t n_sections = r.u32();
        bool have_meta = false, have_stat = false, have_parm = false;
        for (std::uint32_t s = 0; s < n_sections; ++s) {
            const std::string id = r.raw(4);
            const std::uint64_t length = r.u64();
            if (length > r.remaining()) throw detail::TruncatedInput("section " + id + " runs past the end");
            const std::uint8_t* body = r.take(length);
            if (r.u32() != crc_of(body, length)) {
                throw CheckpointError(Kind::ChecksumMismatch, "checksum mismatch in section " + id);
            }
            ByteReader b(body, length);
            if (id == "META") {
                const std::uint32_t n = b.u32();
                for (std::uint32_t i = 0; i < n; ++i) {
                    std::string k = b.str();
                    c.meta.emplace_back(std::move(k), b.str());
                }
                have_meta = true;
            } else if (id == "STAT") {
                c.epoch = static_cast<int>(b.i64());
                c.best_epoch = static_cast<int>(b.i64());
                c.best_val_auroc = b.f64();
                have_stat = true;
            } else if (id == "PARM") {
                c.params = get_table(b);
                have_parm = true;
            } else if (id == "BUFF") {
                c.buffers = get_table(b);
            } else if (id == "OPTM") {
                const std::uint8_t kind = b.u8();
                if (kind == 0) {
                    c.optimizer = OptimizerKind::Adam;
                    c.adam.lr = b.f64();
                    c.adam.beta1 = b.f64();
                    c.adam.beta2 = b.f64();
                    c.adam.epsilon = b.f64();
                    c.adam.t = b.i64();
                    c.adam.m = get_vectors(b);
                    c.adam.v = get_vectors(b);
                } else if (kind == 1) {
                    c.optimizer = OptimizerKind::Sgd;
                    c.sgd.lr = b.f64();
                    c.sgd.momentum = b.f64();
                    c.sgd.nesterov = b.u8() != 0;
                    c.sgd.velocity = get_vectors(b);
                } else {
                    throw CheckpointError(Kind::Malformed, "unknown optimizer kind " + std::to_string(kind));
                }
            } else if (id == "BPRM") {
                c.best_params = get_table(b);
            } else if (id == "BBUF") {
                c.best_buffers = get_table(b);
            } else {
                throw CheckpointError(Kind::Malformed, "unknown checkpoint section '" + id + "'");
            }
            if (b.remaining() != 0) throw CheckpointError(Kind::Malformed, "trailing bytes in section " + id);
        }
        if (!have_meta || !have_stat || !have_parm) {
            throw CheckpointError(Kind::Malformed, "checkpoint lacks a META, STAT or PARM section");
        }
        if (r.remaining() != 0) throw CheckpointError(Kind::Malformed, "trailing bytes after the last section");
    } catch (const detail::TruncatedInput& e) {
        throw CheckpointError(Kind::Truncated, std::string("truncated checkpoint: ") + e.what());
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace sattag
