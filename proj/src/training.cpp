#include "diwa/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "diwa/diffusion.hpp"

namespace diwa {

namespace {

constexpr uint32_t kCkptVersion = 1;
constexpr uint32_t kTagF64 = 0;
constexpr uint32_t kTagU64 = 1;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void append_u32(std::vector<unsigned char>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void append_u64(std::vector<unsigned char>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void append_f64(std::vector<unsigned char>& b, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    append_u64(b, v);
}

struct Entry {
    std::string name;
    uint32_t tag = kTagF64;
    std::vector<uint64_t> dims;
    std::vector<double> f64;
    std::vector<uint64_t> u64;
};

/// Bounds-checked little-endian reader over a loaded file image.
struct Reader {
    const std::vector<unsigned char>& buf;
    size_t pos = 0;

    bool done() const { return pos == buf.size(); }
    void need(size_t n) const {
        if (pos + n > buf.size()) fail("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

TrainState init_train_state(const ModelConfig& cfg, const OptimConfig& opt, uint64_t seed,
                            uint64_t config_hash) {
    TrainState st;
    st.cfg = cfg;
    st.opt = opt;
    st.rng = Rng(seed);
    st.params = init_model_params(cfg, st.rng);
    for (const auto& [name, t] : st.params.map()) {
        st.m.emplace(name, std::vector<double>(static_cast<size_t>(t.numel()), 0.0));
        st.v.emplace(name, std::vector<double>(static_cast<size_t>(t.numel()), 0.0));
    }
    st.config_hash = config_hash;
    return st;
}

double train_step(TrainState& st, const std::vector<ImageSample>& batch,
                  const NoiseSchedule& sched) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

    Tape tape;
    Tape::Scope scope(&tape);

    std::vector<Tensor> xs, zs, es;
    std::vector<double> gammas;
    std::vector<int> ts;
    for (const auto& s : batch) {
        TrainingExample ex = make_training_example(st.cfg, st.params, add_batch_dim(s.lr_up),
                                                   add_batch_dim(s.hr), sched, st.rng);
        xs.push_back(ex.x_cond);
        zs.push_back(ex.z_t);
        es.push_back(ex.eps);
        gammas.push_back(ex.gamma_t);
        ts.push_back(ex.t);
    }
    Tensor x_cond = xs.size() == 1 ? xs[0] : concat(xs, 0);
    Tensor z_t = zs.size() == 1 ? zs[0] : concat(zs, 0);
    Tensor eps = es.size() == 1 ? es[0] : concat(es, 0);

    Tensor f_out = f_forward(st.cfg, st.params, x_cond, z_t, gammas, /*training=*/true, st.rng);
    Tensor loss = l1_loss(eps, f_out);
    const double loss_val = loss.value();
    if (!std::isfinite(loss_val)) {
        std::ostringstream os;
        os << "train_step: non-finite loss at step " << st.step + 1 << " (batch id "
           << st.step + 1 << "; gamma_t:";
        for (size_t i = 0; i < gammas.size(); ++i) os << ' ' << gammas[i] << "@t=" << ts[i];
        os << ")";
        fail(os.str());
    }

    for (auto& [name, t] : st.params.map()) t.zero_grad();
    tape.backward(loss);
    adamw_update(st, st.opt.lr, st.opt.beta1, st.opt.beta2, st.opt.eps_hat, st.opt.weight_decay);

    st.loss_sum += loss_val;
    ++st.loss_count;
    return loss_val;
}

void adamw_update(TrainState& st, double lr, double beta1, double beta2, double eps_hat,
                  double weight_decay) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    for (auto& [name, t] : st.params.map()) {
        auto g = t.grad();
        if (g.empty()) fail("adamw_update: missing gradient for " + name);
        auto& m = st.m.at(name);
        auto& v = st.v.at(name);
        auto vals = t.values();
        for (size_t i = 0; i < m.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            vals[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps_hat) + weight_decay * vals[i]);
        }
    }
}

void save_checkpoint(const TrainState& st, const std::string& path) {
    std::vector<Entry> entries;
    for (const auto& [name, t] : st.params.map()) {
        Entry e;
        e.name = "param." + name;
        for (int d : t.shape()) e.dims.push_back(static_cast<uint64_t>(d));
        e.f64.assign(t.values().begin(), t.values().end());
        entries.push_back(std::move(e));
    }
    auto add_moments = [&](const char* prefix, const std::map<std::string, std::vector<double>>& mm) {
        for (const auto& [name, vals] : mm) {
            Entry e;
            e.name = std::string(prefix) + name;
            e.dims = {vals.size()};
            e.f64 = vals;
            entries.push_back(std::move(e));
        }
    };
    add_moments("adam.m.", st.m);
    add_moments("adam.v.", st.v);
    {
        Entry e;
        e.name = "step";
        e.tag = kTagU64;
        e.u64 = {static_cast<uint64_t>(st.step)};
        entries.push_back(std::move(e));
    }
    {
        Entry e;
        e.name = "rng";
        e.tag = kTagU64;
        e.dims = {4};
        const auto s = st.rng.state();
        e.u64.assign(s.begin(), s.end());
        entries.push_back(std::move(e));
    }
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.name < b.name; });

    std::vector<unsigned char> out;
    out.insert(out.end(), {'D', 'I', 'W', 'A'});
    append_u32(out, kCkptVersion);
    append_u64(out, st.config_hash);
    for (const Entry& e : entries) {
        append_u32(out, static_cast<uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        append_u32(out, e.tag);
        append_u32(out, static_cast<uint32_t>(e.dims.size()));
        for (uint64_t d : e.dims) append_u64(out, d);
        if (e.tag == kTagF64)
            for (double d : e.f64) append_f64(out, d);
        else
            for (uint64_t v : e.u64) append_u64(out, v);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("checkpoint: cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) fail("checkpoint: write failed: " + path);
}

TrainState load_checkpoint(const std::string& path, const ModelConfig& cfg,
                           const OptimConfig& opt, uint64_t expected_hash,
                           bool allow_hash_mismatch) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("checkpoint: cannot open: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    Reader r{buf};

    if (r.str(4) != "DIWA") fail("checkpoint: magic mismatch (not a checkpoint file)");
    const uint32_t version = r.u32();
    if (version != kCkptVersion) {
        std::ostringstream os;
        os << "checkpoint: unsupported format version " << version;
        fail(os.str());
    }
    const uint64_t file_hash = r.u64();
    if (file_hash != expected_hash) {
        std::ostringstream os;
        os << "checkpoint: config hash mismatch (file " << std::hex << file_hash << ", expected "
           << expected_hash << ")";
        if (!allow_hash_mismatch) fail(os.str());
        std::cerr << "warning: " << os.str() << "; proceeding on override\n";
    }

    TrainState st;
    st.cfg = cfg;
    st.opt = opt;
    st.config_hash = file_hash;
    bool saw_step = false, saw_rng = false;

    while (!r.done()) {
        const uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const uint32_t tag = r.u32();
        const uint32_t ndim = r.u32();
        std::vector<uint64_t> dims(ndim);
        uint64_t count = 1;
        for (auto& d : dims) {
            d = r.u64();
            count *= d;
        }
        if (tag == kTagF64) {
            std::vector<double> vals(count);
            for (auto& v : vals) v = r.f64();
            if (name.rfind("param.", 0) == 0) {
                std::vector<int> shape(dims.begin(), dims.end());
                st.params.emplace(name.substr(6),
                                  Tensor::from(std::move(shape), std::move(vals), true));
            } else if (name.rfind("adam.m.", 0) == 0) {
                st.m.emplace(name.substr(7), std::move(vals));
            } else if (name.rfind("adam.v.", 0) == 0) {
                st.v.emplace(name.substr(7), std::move(vals));
            } else {
                fail("checkpoint: unknown entry " + name);
            }
        } else if (tag == kTagU64) {
            std::vector<uint64_t> vals(count);
            for (auto& v : vals) v = r.u64();
            if (name == "step" && vals.size() == 1) {
                st.step = static_cast<int64_t>(vals[0]);
                saw_step = true;
            } else if (name == "rng" && vals.size() == 4) {
                st.rng.set_state({vals[0], vals[1], vals[2], vals[3]});
                saw_rng = true;
            } else {
                fail("checkpoint: unknown entry " + name);
            }
        } else {
            fail("checkpoint: unknown dtype tag in entry " + name);
        }
    }

    if (!saw_step || !saw_rng) fail("checkpoint: incomplete (missing step or rng entry)");
    for (const auto& [name, t] : st.params.map()) {
        auto mi = st.m.find(name);
        auto vi = st.v.find(name);
        if (mi == st.m.end() || vi == st.v.end() ||
            mi->second.size() != static_cast<size_t>(t.numel()) ||
            vi->second.size() != static_cast<size_t>(t.numel()))
            fail("checkpoint: moment arrays do not match parameter " + name);
    }
    if (st.m.size() != st.params.map().size() || st.v.size() != st.params.map().size())
        fail("checkpoint: orphan moment arrays");
    return st;
}

}  // namespace diwa
