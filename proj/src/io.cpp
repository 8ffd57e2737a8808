#include "fedtcd/io.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "fedtcd/bytes.hpp"
#include "fedtcd/errors.hpp"

namespace fedtcd {

namespace {

constexpr std::uint16_t kVersion = 1;

void header(ByteWriter& w, std::string_view magic) {
    w.put_magic(magic);
    w.put<std::uint16_t>(kVersion);
}

void check_header(ByteReader& r, std::string_view magic) {
    r.expect_magic(magic);
    if (r.get<std::uint16_t>() != kVersion) throw IoError(std::string(magic) + ": unsupported version");
}

void finish(const ByteReader& r, std::string_view what) {
    if (r.remaining() != 0) throw IoError(std::string(what) + ": trailing bytes");
}

void put_dims(ByteWriter& w, std::size_t T, std::size_t D, std::size_t L) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(T));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(D));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(L));
}

void put_mask_bits(ByteWriter& w, const Mask3& m) { w.put_bytes(pack_bits(m.data)); }

Mask3 get_mask_bits(ByteReader& r, std::size_t a, std::size_t b, std::size_t c) {
    Mask3 m(a, b, c);
    m.data = unpack_bits(r.get_bytes((m.size() + 7) / 8), m.size());
    return m;
}

Mask3 get_mask_bytes(ByteReader& r, std::size_t a, std::size_t b, std::size_t c) {
    Mask3 m(a, b, c);
    const auto raw = r.get_bytes(m.size());
    m.data.assign(raw.begin(), raw.end());
    return m;
}

Tensor3 get_tensor(ByteReader& r, std::size_t a, std::size_t b, std::size_t c) {
    Tensor3 x(a, b, c);
    r.get_doubles(x.data);
    return x;
}

void put_csv_loss(std::ostream& os, const LossComponents& l) {
    os << l.total << "," << l.mse << "," << l.dag << "," << l.soft_w << "," << l.soft_a;
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("failed reading " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> mask) {
    std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
    for (std::size_t a = 0; a < mask.size(); ++a)
        if (mask[a]) out[a / 8] |= static_cast<std::uint8_t>(1u << (a % 8));
    return out;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count) {
    if (packed.size() != (count + 7) / 8) throw IoError("bit-packed mask has the wrong length");
    std::vector<std::uint8_t> out(count);
    for (std::size_t a = 0; a < count; ++a) out[a] = (packed[a / 8] >> (a % 8)) & 1u;
    return out;
}

std::vector<std::uint8_t> encode_dataset(std::span<const TimeSeriesPanel> panels, std::size_t L) {
    if (panels.empty()) throw ConfigError("dataset: no panels");
    const std::size_t T = panels.front().T(), D = panels.front().D();
    ByteWriter w;
    header(w, "DDIC");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(panels.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(D));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(T));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(L));
    for (const auto& p : panels) {
        if (p.T() != T || p.D() != D) throw ConfigError("dataset: panels disagree on T or D");
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.client_id));
        w.put<std::uint64_t>(p.n());
    }
    for (const auto& p : panels) w.put_doubles(p.values.data);
    return w.take();
}

std::vector<TimeSeriesPanel> decode_dataset(std::span<const std::uint8_t> bytes, std::size_t* L) {
    ByteReader r(bytes, "dataset");
    check_header(r, "DDIC");
    const std::size_t K = r.get<std::uint32_t>(), D = r.get<std::uint32_t>(), T = r.get<std::uint32_t>();
    const std::size_t lag = r.get<std::uint32_t>();
    if (L) *L = lag;
    std::vector<TimeSeriesPanel> panels(K);
    for (auto& p : panels) {
        p.client_id = r.get<std::uint32_t>();
        const auto n = r.get<std::uint64_t>();
        if (n > r.remaining()) throw IoError("dataset: implausible sample count");
        p.values = Tensor3(n, T, D);
    }
    for (auto& p : panels) r.get_doubles(p.values.data);
    finish(r, "dataset");
    return panels;
}

std::vector<std::uint8_t> encode_truth(const GroundTruth& g) {
    ByteWriter w;
    header(w, "DDGT");
    put_dims(w, g.W_true.d0, g.W_true.d1, g.A_true.d0);
    w.put_doubles(g.W_true.data);
    w.put_doubles(g.A_true.data);
    for (const Mask3* m : {&g.oracle_S, &g.oracle_L, &g.oracle_S_A, &g.oracle_L_A}) w.put_bytes(m->data);
    return w.take();
}

GroundTruth decode_truth(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "ground truth");
    check_header(r, "DDGT");
    const std::size_t T = r.get<std::uint32_t>(), D = r.get<std::uint32_t>(), L = r.get<std::uint32_t>();
    GroundTruth g;
    g.W_true = get_tensor(r, T, D, D);
    g.A_true = get_tensor(r, L, D, D);
    g.oracle_S = get_mask_bytes(r, T, D, D);
    g.oracle_L = get_mask_bytes(r, T, D, D);
    g.oracle_S_A = get_mask_bytes(r, L, D, D);
    g.oracle_L_A = get_mask_bytes(r, L, D, D);
    finish(r, "ground truth");
    return g;
}

std::vector<std::uint8_t> encode_priors(const PriorSet& p) {
    ByteWriter w;
    header(w, "DDPS");
    put_dims(w, p.T(), p.D(), p.L());
    w.put<std::uint64_t>(p.sampled_times.size());
    for (auto t : p.sampled_times) w.put<std::uint64_t>(t);
    w.put<double>(p.meta.delta_hard);
    w.put<double>(p.meta.delta_local);
    w.put<std::uint64_t>(p.meta.T_S);
    w.put<std::uint64_t>(p.meta.h);
    w.put<double>(p.meta.sigma);
    w.put<double>(p.meta.ridge_scale);
    w.put<std::uint8_t>(p.meta.surrogate ? 1 : 0);
    put_mask_bits(w, p.S);
    put_mask_bits(w, p.L_soft);
    put_mask_bits(w, p.S_A);
    put_mask_bits(w, p.L_soft_A);
    return w.take();
}

PriorSet decode_priors(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "prior set");
    check_header(r, "DDPS");
    const std::size_t T = r.get<std::uint32_t>(), D = r.get<std::uint32_t>(), L = r.get<std::uint32_t>();
    PriorSet p;
    const auto S = r.get<std::uint64_t>();
    if (S > T) throw IoError("prior set: more sampled times than slices");
    for (std::size_t s = 0; s < S; ++s) p.sampled_times.push_back(r.get<std::uint64_t>());
    p.meta.delta_hard = r.get<double>();
    p.meta.delta_local = r.get<double>();
    p.meta.T_S = r.get<std::uint64_t>();
    p.meta.h = r.get<std::uint64_t>();
    p.meta.sigma = r.get<double>();
    p.meta.ridge_scale = r.get<double>();
    p.meta.surrogate = r.get<std::uint8_t>() != 0;
    p.S = get_mask_bits(r, T, D, D);
    p.L_soft = get_mask_bits(r, T, D, D);
    p.S_A = get_mask_bits(r, L, D, D);
    p.L_soft_A = get_mask_bits(r, L, D, D);
    finish(r, "prior set");
    return p;
}

std::vector<std::uint8_t> encode_checkpoint(const DctoState& s) {
    ByteWriter w;
    header(w, "DDCK");
    const ModelShape& m = s.theta.shape;
    for (std::size_t v : {m.D, m.L, m.m, m.w_enc}) w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
    w.put<std::uint64_t>(s.next_round);
    w.put<std::uint64_t>(s.theta.flat.size());
    w.put_doubles(s.theta.flat);
    return w.take();
}

DctoState decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    check_header(r, "DDCK");
    ModelShape shape;
    shape.D = r.get<std::uint32_t>();
    shape.L = r.get<std::uint32_t>();
    shape.m = r.get<std::uint32_t>();
    shape.w_enc = r.get<std::uint32_t>();
    DctoState s;
    s.next_round = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    if (n != shape.size()) throw IoError("checkpoint: parameter count does not match the model shape");
    s.theta.shape = shape;
    s.theta.flat = r.get_doubles(n);
    finish(r, "checkpoint");
    return s;
}

std::vector<std::uint8_t> encode_estimate(const GraphEstimate& e) {
    ByteWriter w;
    header(w, "DDGE");
    put_dims(w, e.W.d0, e.W.d1, e.A.d0);
    w.put_doubles(e.W.data);
    w.put_doubles(e.A.data);
    put_mask_bits(w, e.S);
    put_mask_bits(w, e.S_A);
    return w.take();
}

GraphEstimate decode_estimate_file(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "graph estimate");
    check_header(r, "DDGE");
    const std::size_t T = r.get<std::uint32_t>(), D = r.get<std::uint32_t>(), L = r.get<std::uint32_t>();
    GraphEstimate e;
    e.W = get_tensor(r, T, D, D);
    e.A = get_tensor(r, L, D, D);
    e.S = get_mask_bits(r, T, D, D);
    e.S_A = get_mask_bits(r, L, D, D);
    finish(r, "graph estimate");
    return e;
}

std::string panel_csv(const TimeSeriesPanel& p) {
    std::ostringstream os;
    os.precision(17);
    os << "sample,t";
    for (std::size_t d = 0; d < p.D(); ++d) os << ",V" << d + 1;
    os << "\n";
    for (std::size_t s = 0; s < p.n(); ++s)
        for (std::size_t t = 0; t < p.T(); ++t) {
            os << s << "," << t;
            for (std::size_t d = 0; d < p.D(); ++d) os << "," << p(s, t, d);
            os << "\n";
        }
    return os.str();
}

std::string loss_curve_csv(std::span<const StepLog> steps) {
    std::ostringstream os;
    os.precision(12);
    os << "round,client,step,total,mse,dag,soft_w,soft_a\n";
    for (const auto& s : steps) {
        os << s.round << "," << s.client << "," << s.step << ",";
        put_csv_loss(os, s.loss);
        os << "\n";
    }
    return os.str();
}

std::string round_log_csv(std::span<const RoundLog> rounds) {
    std::ostringstream os;
    os.precision(12);
    os << "round,client,total,mse,dag,soft_w,soft_a,bytes_up,bytes_down,global_total\n";
    for (const auto& r : rounds)
        for (std::size_t k = 0; k < r.client_losses.size(); ++k) {
            os << r.round << "," << k << ",";
            put_csv_loss(os, r.client_losses[k]);
            os << "," << r.bytes_up << "," << r.bytes_down << "," << r.global_loss.total
               << "\n";
        }
    return os.str();
}

std::string mask_summary(const PriorSet& p) {
    const std::size_t D = p.D();
    std::ostringstream os;
    os << "sampled times: " << p.sampled_times.size() << " (T_S = " << p.meta.T_S << ")\n";
    os << "delta_hard = " << p.meta.delta_hard << ", delta_local = " << p.meta.delta_local << "\n";
    for (auto t : p.sampled_times) {
        os << "t = " << t << "\n";
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = i + 1; j < D; ++j) {
                const bool kept = p.S(t, i, j) || p.S(t, j, i);
                const bool soft = p.L_soft(t, i, j) || p.L_soft(t, j, i);
                os << "  (" << i << "," << j << ") " << (kept ? (soft ? "soft" : "kept") : "removed") << "\n";
            }
    }
    if (p.L() > 0) {
        os << "lags\n";
        for (std::size_t tau = 0; tau < p.L(); ++tau)
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t j = 0; j < D; ++j)
                    if (p.S_A(tau, i, j))
                        os << "  lag " << tau + 1 << " (" << i << "->" << j << ") "
                           << (p.L_soft_A(tau, i, j) ? "soft" : "kept") << "\n";
    }
    return os.str();
}

}  // namespace fedtcd
