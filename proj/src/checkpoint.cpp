#include "nct/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "nct/common.hpp"
#include "nct/rng.hpp"

namespace nct {

namespace {

constexpr char kMagic[4] = {'N', 'C', 'T', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ostream& f, const std::string& s) {
    write_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

uint64_t read_u64(std::istream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

std::string read_string(std::istream& f) {
    uint32_t n = read_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    return s;
}

void write_entry(std::ostream& f, const std::string& name, const Tensor& t, bool trainable) {
    write_string(f, name);
    f.put(trainable ? 1 : 0);
    write_u32(f, static_cast<uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) write_u32(f, static_cast<uint32_t>(t.dim(d)));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

struct RawEntry {
    std::string name;
    bool trainable;
    Tensor value;
};

RawEntry read_entry(std::istream& f) {
    RawEntry e;
    e.name = read_string(f);
    e.trainable = f.get() == 1;
    uint32_t nd = read_u32(f);
    std::vector<int> shape(nd);
    for (uint32_t d = 0; d < nd; ++d) shape[d] = static_cast<int>(read_u32(f));
    e.value = Tensor(shape);
    f.read(reinterpret_cast<char*>(e.value.data()),
           static_cast<std::streamsize>(e.value.numel() * sizeof(float)));
    return e;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for write: " + path);
    f.write(kMagic, 4);
    write_u32(f, kVersion);
    write_string(f, ckpt.rng_algo);
    write_string(f, ckpt.config_json);
    write_u64(f, static_cast<uint64_t>(ckpt.opt.t));
    uint64_t n = ckpt.params.size() + ckpt.opt.m.size() + ckpt.opt.v.size();
    write_u64(f, n);
    for (const auto& [name, e] : ckpt.params.entries()) write_entry(f, name, e.value, e.trainable);
    for (const auto& [name, t] : ckpt.opt.m) write_entry(f, "opt.m/" + name, t, false);
    for (const auto& [name, t] : ckpt.opt.v) write_entry(f, "opt.v/" + name, t, false);
    if (!f) throw IoError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for read: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not an NCT1 checkpoint: " + path);
    uint32_t version = read_u32(f);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.rng_algo = read_string(f);
    if (ckpt.rng_algo != kRngAlgoId)
        throw IoError("checkpoint RNG algorithm '" + ckpt.rng_algo + "' does not match this build");
    ckpt.config_json = read_string(f);
    ckpt.opt.t = static_cast<int64_t>(read_u64(f));
    uint64_t n = read_u64(f);
    for (uint64_t i = 0; i < n; ++i) {
        RawEntry e = read_entry(f);
        if (!f) throw IoError("truncated checkpoint: " + path);
        if (e.name.rfind("opt.m/", 0) == 0) ckpt.opt.m[e.name.substr(6)] = e.value;
        else if (e.name.rfind("opt.v/", 0) == 0) ckpt.opt.v[e.name.substr(6)] = e.value;
        else ckpt.params.add(e.name, e.value, e.trainable);
    }
    return ckpt;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for hashing: " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

}  // namespace nct
