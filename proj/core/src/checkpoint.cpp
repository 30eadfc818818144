#include "motiondiff/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace motiondiff {

namespace {

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const uint64_t n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

}  // namespace

void TensorFile::save(const std::filesystem::path& path, const std::string& magic) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    put_u64(os, meta.size());
    for (const auto& [k, v] : meta) {
        put_string(os, k);
        put_string(os, v);
    }
    put_u64(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        put_string(os, name);
        put_u64(os, static_cast<uint64_t>(t.rank()));
        for (int d : t.shape()) put_u64(os, static_cast<uint64_t>(d));
        static_assert(sizeof(double) == 8);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

TensorFile TensorFile::load(const std::filesystem::path& path, const std::string& magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (!is || got != magic) {
        throw std::runtime_error("checkpoint magic mismatch in " + path.string());
    }
    TensorFile tf;
    const uint64_t n_meta = get_u64(is);
    for (uint64_t i = 0; i < n_meta; ++i) {
        std::string k = get_string(is);
        tf.meta[k] = get_string(is);
    }
    const uint64_t n_tensors = get_u64(is);
    for (uint64_t i = 0; i < n_tensors; ++i) {
        std::string name = get_string(is);
        const uint64_t rank = get_u64(is);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(get_u64(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
        tf.tensors[name] = std::move(t);
    }
    return tf;
}

const std::string& TensorFile::meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("checkpoint missing meta key: " + key);
    return it->second;
}

int64_t TensorFile::meta_int(const std::string& key) const { return std::stoll(meta_at(key)); }

double TensorFile::scalar(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end() || it->second.numel() != 1) {
        throw std::runtime_error("checkpoint missing scalar: " + name);
    }
    return it->second[0];
}

void TensorFile::set_scalar(const std::string& name, double v) {
    Tensor t({1});
    t[0] = v;
    tensors[name] = std::move(t);
}

std::string to_hex(uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void CheckpointBundle::save(const std::filesystem::path& path) const {
    TensorFile tf;
    tf.meta["run_config"] = run_config_json;
    tf.meta["denoiser_config"] = denoiser_config_json;
    tf.meta["codec_config"] = codec_config_json;
    tf.meta["config_hash"] = to_hex(config_hash());
    tf.meta["schedule_T"] = std::to_string(schedule_T);
    tf.meta["step"] = std::to_string(step);
    tf.meta["adam_step"] = std::to_string(adam_step);
    for (const auto& [k, v] : rng_states) tf.meta["rng." + k] = v;
    tf.set_scalar("schedule.beta_start", beta_start);
    tf.set_scalar("schedule.beta_end", beta_end);
    tf.set_scalar("codec.latent_scaling", latent_scaling);
    for (const auto& [k, v] : model) tf.tensors["model." + k] = v;
    for (const auto& [k, v] : adam_state) tf.tensors[k] = v;  // already adam.* prefixed
    tf.save(path, kBundleMagic);
}

CheckpointBundle CheckpointBundle::load(const std::filesystem::path& path) {
    const TensorFile tf = TensorFile::load(path, kBundleMagic);
    CheckpointBundle b;
    b.run_config_json = tf.meta_at("run_config");
    b.denoiser_config_json = tf.meta_at("denoiser_config");
    b.codec_config_json = tf.meta_at("codec_config");
    b.schedule_T = static_cast<int>(tf.meta_int("schedule_T"));
    b.step = static_cast<uint64_t>(tf.meta_int("step"));
    b.adam_step = tf.meta_int("adam_step");
    b.beta_start = tf.scalar("schedule.beta_start");
    b.beta_end = tf.scalar("schedule.beta_end");
    b.latent_scaling = tf.scalar("codec.latent_scaling");
    for (const auto& [k, v] : tf.meta) {
        if (k.rfind("rng.", 0) == 0) b.rng_states[k.substr(4)] = v;
    }
    for (const auto& [k, v] : tf.tensors) {
        if (k.rfind("model.", 0) == 0) b.model[k.substr(6)] = v;
        else if (k.rfind("adam.", 0) == 0) b.adam_state[k] = v;
    }
    return b;
}

}  // namespace motiondiff
