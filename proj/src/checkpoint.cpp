#include <cstdio>
#include <filesystem>
#include <map>

#include "gavatar/binio.hpp"
#include "gavatar/trainer.hpp"

namespace gavatar {

namespace {

constexpr char kMagic[4] = {'G', 'A', 'V', 'K'};
constexpr uint32_t kVersion = 1;
enum : uint8_t { kF32 = 0, kI32 = 1, kBytes = 2 };

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    void header(const std::string& name, uint8_t dtype, const std::vector<uint32_t>& dims) {
        write_string(os_, name);
        os_.put(static_cast<char>(dtype));
        write_u32(os_, static_cast<uint32_t>(dims.size()));
        for (uint32_t d : dims) write_u32(os_, d);
    }
    void f32(const std::string& name, const double* data, const std::vector<uint32_t>& dims) {
        header(name, kF32, dims);
        std::size_t n = 1;
        for (uint32_t d : dims) n *= d;
        write_f32_array(os_, data, n);
    }
    void i32(const std::string& name, const std::vector<int>& data) {
        header(name, kI32, {static_cast<uint32_t>(data.size())});
        for (int v : data) write_i32(os_, v);
    }
    void bytes(const std::string& name, const std::string& data) {
        header(name, kBytes, {static_cast<uint32_t>(data.size())});
        os_.write(data.data(), static_cast<std::streamsize>(data.size()));
    }

private:
    std::ostream& os_;
};

struct Section {
    uint8_t dtype = 0;
    std::vector<uint32_t> dims;
    std::vector<double> f;
    std::vector<int> i;
    std::string b;

    std::size_t count() const {
        std::size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

class Reader {
public:
    explicit Reader(std::istream& is) {
        while (is.peek() != EOF) {
            std::string name = read_string(is);
            Section s;
            int dt = is.get();
            if (dt == EOF) throw ValidationError("truncated checkpoint section: " + name);
            s.dtype = static_cast<uint8_t>(dt);
            uint32_t nd = read_u32(is);
            for (uint32_t k = 0; k < nd; ++k) s.dims.push_back(read_u32(is));
            const std::size_t n = s.count();
            if (s.dtype == kF32) {
                s.f.resize(n);
                read_f32_array(is, s.f.data(), n);
            } else if (s.dtype == kI32) {
                s.i.resize(n);
                for (std::size_t k = 0; k < n; ++k) s.i[k] = read_i32(is);
            } else if (s.dtype == kBytes) {
                s.b.resize(n);
                is.read(s.b.data(), static_cast<std::streamsize>(n));
                if (!is) throw ValidationError("truncated checkpoint section: " + name);
            } else {
                throw ValidationError("unknown checkpoint section dtype");
            }
            sections_.emplace(std::move(name), std::move(s));
        }
    }

    const Section& at(const std::string& name) const {
        auto it = sections_.find(name);
        if (it == sections_.end()) throw ValidationError("checkpoint is missing section: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return sections_.count(name) != 0; }
    const std::map<std::string, Section>& all() const { return sections_; }

private:
    std::map<std::string, Section> sections_;
};

std::vector<uint32_t> mat_dims(const Eigen::MatrixXd& m) {
    return {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
}

void write_matrix(Writer& w, const std::string& name, const Eigen::MatrixXd& m) {
    // row-major on disk
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    w.f32(name, rm.data(), mat_dims(m));
}

Eigen::MatrixXd read_matrix(const Reader& r, const std::string& name) {
    const Section& s = r.at(name);
    if (s.dims.size() != 2) throw ValidationError("checkpoint section is not a matrix: " + name);
    Eigen::MatrixXd m(s.dims[0], s.dims[1]);
    for (uint32_t i = 0; i < s.dims[0]; ++i)
        for (uint32_t j = 0; j < s.dims[1]; ++j) m(i, j) = s.f[static_cast<std::size_t>(i) * s.dims[1] + j];
    return m;
}

void write_vec3s(Writer& w, const std::string& name, const std::vector<Eigen::Vector3d>& v) {
    w.f32(name, v.empty() ? nullptr : v[0].data(), {static_cast<uint32_t>(v.size()), 3});
}

std::vector<Eigen::Vector3d> read_vec3s(const Reader& r, const std::string& name) {
    const Section& s = r.at(name);
    std::vector<Eigen::Vector3d> v(s.dims[0]);
    for (uint32_t i = 0; i < s.dims[0]; ++i)
        v[i] = Eigen::Vector3d(s.f[i * 3], s.f[i * 3 + 1], s.f[i * 3 + 2]);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const TrainerState& st) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw ValidationError("cannot write checkpoint: " + path);
        os.write(kMagic, 4);
        write_u32(os, kVersion);
        Writer w(os);

        w.bytes("config", st.config.to_json());
        w.i32("iteration", {st.iteration});

        const HeadModel& m = st.model;
        write_matrix(w, "model/template", m.template_vertices);
        std::vector<int> faces;
        for (int f = 0; f < m.faces.rows(); ++f)
            for (int k = 0; k < 3; ++k) faces.push_back(m.faces(f, k));
        w.i32("model/faces", faces);
        w.i32("model/dims", {m.vertex_count(), m.face_count(), m.n_shape(), m.n_expr(), m.joint_count});
        for (int k = 0; k < m.n_shape(); ++k)
            write_matrix(w, "model/shape_basis/" + std::to_string(k), m.shape_basis[k]);
        for (int k = 0; k < m.n_expr(); ++k)
            write_matrix(w, "model/expr_basis/" + std::to_string(k), m.expression_basis[k]);
        write_matrix(w, "model/vertex_offsets", m.vertex_offsets);
        write_matrix(w, "model/skinning", m.skinning_weights);
        w.i32("model/joint_parents", m.joint_parents);
        write_matrix(w, "model/joint_rest", m.joint_rest_positions);
        write_matrix(w, "model/vertex_colors", m.vertex_colors);

        const uint32_t N = static_cast<uint32_t>(st.cameras.size());
        std::vector<double> intr, R, t;
        std::vector<int> sizes;
        for (const Camera& c : st.cameras) {
            intr.insert(intr.end(), {c.fx, c.fy, c.cx, c.cy});
            for (int r = 0; r < 3; ++r)
                for (int col = 0; col < 3; ++col) R.push_back(c.R(r, col));
            t.insert(t.end(), {c.t.x(), c.t.y(), c.t.z()});
            sizes.push_back(c.width);
            sizes.push_back(c.height);
        }
        w.f32("cameras/intrinsics", intr.data(), {N, 4});
        w.f32("cameras/R", R.data(), {N, 9});
        w.f32("cameras/t", t.data(), {N, 3});
        w.i32("cameras/size", sizes);

        w.i32("split/train_t", st.train_t);
        w.i32("split/heldout_t", st.heldout_t);
        w.i32("split/heldout_view", {st.heldout_view});

        w.i32("cloud/triangle_id", st.cloud.triangle_id);
        write_vec3s(w, "cloud/barycentric", st.cloud.barycentric);
        write_vec3s(w, "cloud/local_offset", st.cloud.local_offset);
        write_vec3s(w, "cloud/log_scale", st.cloud.log_scale);
        w.f32("cloud/rotation", st.cloud.rotation.empty() ? nullptr : st.cloud.rotation[0].data(),
              {static_cast<uint32_t>(st.cloud.rotation.size()), 4});
        w.f32("cloud/opacity_logit", st.cloud.opacity_logit.data(),
              {static_cast<uint32_t>(st.cloud.opacity_logit.size())});
        w.i32("cloud/sh_degree", {st.cloud.sh_degree});
        write_vec3s(w, "cloud/sh", st.cloud.sh_coeffs);

        w.f32("shape", st.shape.data(), {static_cast<uint32_t>(st.shape.size())});

        const uint32_t T = static_cast<uint32_t>(st.flame.size());
        const uint32_t J = static_cast<uint32_t>(m.joint_count);
        const uint32_t E = static_cast<uint32_t>(m.n_expr());
        std::vector<double> rr, rt, jr, ex;
        for (const HeadParams& p : st.flame) {
            rr.insert(rr.end(), p.rigid_rotation.data(), p.rigid_rotation.data() + 3);
            rt.insert(rt.end(), p.rigid_translation.data(), p.rigid_translation.data() + 3);
            for (const auto& j : p.joint_rotations) jr.insert(jr.end(), j.data(), j.data() + 3);
            ex.insert(ex.end(), p.expression.data(), p.expression.data() + p.expression.size());
        }
        w.f32("flame/rigid_rotation", rr.data(), {T, 3});
        w.f32("flame/rigid_translation", rt.data(), {T, 3});
        w.f32("flame/joints", jr.data(), {T, J, 3});
        w.f32("flame/expression", ex.data(), {T, E});

        std::vector<int> bank_ts;
        std::vector<double> slots;
        for (const auto& [ts, entry] : st.bank.entries) {
            bank_ts.push_back(ts);
            for (const auto& slot : entry) slots.insert(slots.end(), slot.data(), slot.data() + slot.size());
        }
        w.i32("bank/timestamps", bank_ts);
        w.i32("bank/view_count", {st.bank.view_count});
        w.i32("bank/n_expr", {st.bank.n_expr});
        w.f32("bank/slots", slots.data(),
              {static_cast<uint32_t>(bank_ts.size()), static_cast<uint32_t>(st.bank.view_count),
               static_cast<uint32_t>(st.bank.n_expr)});

        write_matrix(w, "features", st.features);

        for (const auto& [name, tns] : st.params.params) {
            std::vector<uint32_t> dims(tns.shape.begin(), tns.shape.end());
            w.f32("param/" + name, tns.v.data(), dims);
        }
        for (const auto& [name, slot] : st.adam) {
            w.f32("adam/" + name + "/m", slot.m.data(), {static_cast<uint32_t>(slot.m.size())});
            w.f32("adam/" + name + "/v", slot.v.data(), {static_cast<uint32_t>(slot.v.size())});
        }
    }
    std::filesystem::rename(tmp, path);
}

TrainerState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError("not a checkpoint file: " + path);
    if (read_u32(is) != kVersion) throw ValidationError("unsupported checkpoint version");
    Reader r(is);

    TrainerState st;
    st.config = TrainConfig::from_json(r.at("config").b);
    st.iteration = r.at("iteration").i.at(0);

    const auto& dims = r.at("model/dims").i;
    HeadModel& m = st.model;
    m.template_vertices = read_matrix(r, "model/template");
    const int F = dims.at(1);
    m.faces.resize(F, 3);
    const auto& faces = r.at("model/faces").i;
    for (int f = 0; f < F; ++f)
        for (int k = 0; k < 3; ++k) m.faces(f, k) = faces[static_cast<std::size_t>(f) * 3 + k];
    for (int k = 0; k < dims.at(2); ++k)
        m.shape_basis.push_back(read_matrix(r, "model/shape_basis/" + std::to_string(k)));
    for (int k = 0; k < dims.at(3); ++k)
        m.expression_basis.push_back(read_matrix(r, "model/expr_basis/" + std::to_string(k)));
    m.vertex_offsets = read_matrix(r, "model/vertex_offsets");
    m.skinning_weights = read_matrix(r, "model/skinning");
    m.joint_parents = r.at("model/joint_parents").i;
    m.joint_count = dims.at(4);
    m.joint_rest_positions = read_matrix(r, "model/joint_rest");
    m.vertex_colors = read_matrix(r, "model/vertex_colors");
    m.validate();

    const Section& intr = r.at("cameras/intrinsics");
    const Section& cR = r.at("cameras/R");
    const Section& ct = r.at("cameras/t");
    const auto& sizes = r.at("cameras/size").i;
    for (uint32_t i = 0; i < intr.dims[0]; ++i) {
        Camera c;
        c.fx = intr.f[i * 4];
        c.fy = intr.f[i * 4 + 1];
        c.cx = intr.f[i * 4 + 2];
        c.cy = intr.f[i * 4 + 3];
        for (int rr = 0; rr < 3; ++rr)
            for (int cc = 0; cc < 3; ++cc) c.R(rr, cc) = cR.f[i * 9 + rr * 3 + cc];
        c.t = Eigen::Vector3d(ct.f[i * 3], ct.f[i * 3 + 1], ct.f[i * 3 + 2]);
        c.width = sizes[i * 2];
        c.height = sizes[i * 2 + 1];
        st.cameras.push_back(c);
    }

    st.train_t = r.at("split/train_t").i;
    st.heldout_t = r.at("split/heldout_t").i;
    st.heldout_view = r.at("split/heldout_view").i.at(0);

    st.cloud.triangle_id = r.at("cloud/triangle_id").i;
    st.cloud.barycentric = read_vec3s(r, "cloud/barycentric");
    st.cloud.local_offset = read_vec3s(r, "cloud/local_offset");
    st.cloud.log_scale = read_vec3s(r, "cloud/log_scale");
    const Section& rot = r.at("cloud/rotation");
    for (uint32_t i = 0; i < rot.dims[0]; ++i)
        st.cloud.rotation.emplace_back(rot.f[i * 4], rot.f[i * 4 + 1], rot.f[i * 4 + 2], rot.f[i * 4 + 3]);
    st.cloud.opacity_logit = r.at("cloud/opacity_logit").f;
    st.cloud.sh_degree = r.at("cloud/sh_degree").i.at(0);
    st.cloud.sh_coeffs = read_vec3s(r, "cloud/sh");

    const Section& shape = r.at("shape");
    st.shape = Eigen::Map<const Eigen::VectorXd>(shape.f.data(), shape.f.size());

    const Section& ex = r.at("flame/expression");
    const Section& rr = r.at("flame/rigid_rotation");
    const Section& rt = r.at("flame/rigid_translation");
    const Section& jr = r.at("flame/joints");
    const uint32_t T = ex.dims[0], E = ex.dims[1], J = jr.dims.size() > 1 ? jr.dims[1] : 0;
    for (uint32_t t = 0; t < T; ++t) {
        HeadParams p;
        p.rigid_rotation = Eigen::Vector3d(rr.f[t * 3], rr.f[t * 3 + 1], rr.f[t * 3 + 2]);
        p.rigid_translation = Eigen::Vector3d(rt.f[t * 3], rt.f[t * 3 + 1], rt.f[t * 3 + 2]);
        for (uint32_t j = 0; j < J; ++j)
            p.joint_rotations.emplace_back(jr.f[(t * J + j) * 3], jr.f[(t * J + j) * 3 + 1],
                                           jr.f[(t * J + j) * 3 + 2]);
        p.shape = st.shape;
        p.expression = Eigen::Map<const Eigen::VectorXd>(ex.f.data() + t * E, E);
        st.flame.push_back(std::move(p));
    }

    st.bank.view_count = r.at("bank/view_count").i.at(0);
    st.bank.n_expr = r.at("bank/n_expr").i.at(0);
    const auto& bank_ts = r.at("bank/timestamps").i;
    const Section& slots = r.at("bank/slots");
    for (std::size_t k = 0; k < bank_ts.size(); ++k) {
        std::vector<Eigen::VectorXd> entry;
        for (int v = 0; v < st.bank.view_count; ++v)
            entry.push_back(Eigen::Map<const Eigen::VectorXd>(
                slots.f.data() + (k * st.bank.view_count + v) * st.bank.n_expr, st.bank.n_expr));
        st.bank.entries.emplace(bank_ts[k], std::move(entry));
    }

    st.features = read_matrix(r, "features");

    for (const auto& [name, s] : r.all()) {
        if (name.rfind("param/", 0) == 0) {
            std::vector<int> shape(s.dims.begin(), s.dims.end());
            Tensor& t = st.params.add(name.substr(6), shape);
            t.v = s.f;
        } else if (name.rfind("adam/", 0) == 0) {
            std::string rest = name.substr(5);
            bool is_m = rest.size() > 2 && rest.compare(rest.size() - 2, 2, "/m") == 0;
            std::string key = rest.substr(0, rest.size() - 2);
            AdamSlot& slot = st.adam[key];
            (is_m ? slot.m : slot.v) = s.f;
        }
    }
    return st;
}

} // namespace gavatar
