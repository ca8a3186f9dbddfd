#include "cmsr/deform.hpp"

#include "cmsr/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace cmsr {

Tensor identity_grid(int h, int w) {
  if (h < 1 || w < 1)
    throw std::invalid_argument("identity_grid: size must be >= 1");
  std::vector<float> data(static_cast<size_t>(2) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      data[static_cast<size_t>(y) * w + x] =
          (2.0f * x + 1.0f) / static_cast<float>(w) - 1.0f;
      data[static_cast<size_t>(h) * w + static_cast<size_t>(y) * w + x] =
          (2.0f * y + 1.0f) / static_cast<float>(h) - 1.0f;
    }
  return Tensor::from_data(Shape{1, 2, h, w}, std::move(data));
}

AffineParams AffineParams::identity() {
  AffineParams p;
  p.theta = Tensor::from_data(Shape{1, 1, 2, 3}, {1, 0, 0, 0, 1, 0}, true);
  return p;
}

Tensor affine_warp_grid(const AffineParams &p, const Tensor &grid) {
  const Shape gs = grid.shape();
  const size_t P = static_cast<size_t>(gs.h) * gs.w;
  const float *th = p.theta.data();
  const float *gx = grid.data();
  const float *gy = grid.data() + P;
  std::vector<float> out(2 * P);
  for (size_t i = 0; i < P; ++i) {
    out[i] = th[0] * gx[i] + th[1] * gy[i] + th[2];
    out[P + i] = th[3] * gx[i] + th[4] * gy[i] + th[5];
  }
  return make_op(
      gs, std::move(out), {p.theta, grid}, [P](detail::TensorNode &self) {
        const auto &theta = self.parents[0];
        const auto &grid = self.parents[1];
        const float *gx = grid->data.data();
        const float *gy = grid->data.data() + P;
        const float *go_x = self.grad.data();
        const float *go_y = self.grad.data() + P;
        if (theta->requires_grad) {
          double d[6] = {};
          for (size_t i = 0; i < P; ++i) {
            d[0] += static_cast<double>(go_x[i]) * gx[i];
            d[1] += static_cast<double>(go_x[i]) * gy[i];
            d[2] += go_x[i];
            d[3] += static_cast<double>(go_y[i]) * gx[i];
            d[4] += static_cast<double>(go_y[i]) * gy[i];
            d[5] += go_y[i];
          }
          float df[6];
          for (int j = 0; j < 6; ++j)
            df[j] = static_cast<float>(d[j]);
          accumulate_grad(theta, df);
        }
        if (grid->requires_grad) {
          const float *th = theta->data.data();
          std::vector<float> d(2 * P);
          for (size_t i = 0; i < P; ++i) {
            d[i] = th[0] * go_x[i] + th[3] * go_y[i];
            d[P + i] = th[1] * go_x[i] + th[4] * go_y[i];
          }
          accumulate_grad(grid, d.data());
        }
      });
}

namespace {

// Cell corner/center coordinates for tessellation lookups.
struct CellGeom {
  float x0, x1, y0, y1, cx, cy;
};

CellGeom cell_geom(int nx, int ny, int cx, int cy) {
  CellGeom g;
  g.x0 = -1.0f + 2.0f * cx / nx;
  g.x1 = -1.0f + 2.0f * (cx + 1) / nx;
  g.y0 = -1.0f + 2.0f * cy / ny;
  g.y1 = -1.0f + 2.0f * (cy + 1) / ny;
  g.cx = 0.5f * (g.x0 + g.x1);
  g.cy = 0.5f * (g.y0 + g.y1);
  return g;
}

// Triangle vertices, triangle index = 4*cell + {0:top,1:right,2:bottom,3:left}.
void triangle_vertices(int nx, int ny, int tri, double vx[3], double vy[3]) {
  const int cell = tri / 4, k = tri % 4;
  const CellGeom g = cell_geom(nx, ny, cell % nx, cell / nx);
  const double corners_x[4] = {g.x0, g.x1, g.x1, g.x0};
  const double corners_y[4] = {g.y0, g.y0, g.y1, g.y1};
  // k edge: top (v00,v10), right (v10,v11), bottom (v11,v01), left (v01,v00)
  vx[0] = corners_x[k];
  vy[0] = corners_y[k];
  vx[1] = corners_x[(k + 1) % 4];
  vy[1] = corners_y[(k + 1) % 4];
  vx[2] = g.cx;
  vy[2] = g.cy;
}

std::shared_ptr<const std::vector<float>>
build_cpab_basis(int nx, int ny, int &dim_out) {
  if (nx < 1 || ny < 1)
    throw std::invalid_argument("CpabField: tessellation must be >= 1x1");
  const int T = nx * ny * 4;
  const int unknowns = 6 * T;

  struct Edge {
    int tri_a, tri_b;
    double px, py, qx, qy;
  };
  std::vector<Edge> edges;
  for (int cy = 0; cy < ny; ++cy)
    for (int cx = 0; cx < nx; ++cx) {
      const int base = 4 * (cy * nx + cx);
      const CellGeom g = cell_geom(nx, ny, cx, cy);
      const double corners_x[4] = {g.x0, g.x1, g.x1, g.x0};
      const double corners_y[4] = {g.y0, g.y0, g.y1, g.y1};
      // spokes: corner k -> center, shared by triangles (k-1)%4 and k
      for (int k = 0; k < 4; ++k)
        edges.push_back({base + (k + 3) % 4, base + k, corners_x[k],
                         corners_y[k], g.cx, g.cy});
      // shared edge with right neighbor: right(1) here, left(3) there
      if (cx + 1 < nx)
        edges.push_back({base + 1, 4 * (cy * nx + cx + 1) + 3, g.x1, g.y0,
                         g.x1, g.y1});
      // shared edge with lower neighbor: bottom(2) here, top(0) there
      if (cy + 1 < ny)
        edges.push_back({base + 2, 4 * ((cy + 1) * nx + cx), g.x0, g.y1,
                         g.x1, g.y1});
    }

  // Two constraints per (edge, endpoint): velocity agreement in x and y.
  Eigen::MatrixXd L =
      Eigen::MatrixXd::Zero(static_cast<int>(edges.size()) * 4, unknowns);
  int row = 0;
  for (const Edge &e : edges) {
    const double pts[2][2] = {{e.px, e.py}, {e.qx, e.qy}};
    for (const auto &pt : pts) {
      for (int comp = 0; comp < 2; ++comp, ++row) {
        const int oa = 6 * e.tri_a + 3 * comp;
        const int ob = 6 * e.tri_b + 3 * comp;
        L(row, oa) = pt[0];
        L(row, oa + 1) = pt[1];
        L(row, oa + 2) = 1.0;
        L(row, ob) = -pt[0];
        L(row, ob + 1) = -pt[1];
        L(row, ob + 2) = -1.0;
      }
    }
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(L, Eigen::ComputeFullV);
  const auto &sv = svd.singularValues();
  const double tol = sv.size() > 0 ? sv(0) * 1e-9 : 0.0;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > tol)
      ++rank;
  const int dim = unknowns - rank;
  if (dim <= 0)
    throw std::runtime_error("CpabField: degenerate tessellation, empty basis");

  auto basis = std::make_shared<std::vector<float>>(
      static_cast<size_t>(unknowns) * dim);
  const auto &V = svd.matrixV();
  for (int i = 0; i < unknowns; ++i)
    for (int d = 0; d < dim; ++d)
      (*basis)[static_cast<size_t>(i) * dim + d] =
          static_cast<float>(V(i, rank + d));
  dim_out = dim;
  return basis;
}

} // namespace

CpabField::CpabField(int nx, int ny, int n_steps)
    : nx_(nx), ny_(ny), n_steps_(n_steps) {
  if (n_steps < 1)
    throw std::invalid_argument("CpabField: n_steps must be >= 1");
  basis_ = build_cpab_basis(nx, ny, dim_);
  coeffs_ = Tensor::zeros(Shape{1, 1, 1, dim_}, true);
}

std::vector<float> CpabField::velocity_matrices() const {
  return velocity_matrices(coeffs_.data());
}

std::vector<float> CpabField::velocity_matrices(const float *coeffs) const {
  const size_t rows = static_cast<size_t>(6) * n_triangles();
  std::vector<float> A(rows, 0.0f);
  const std::vector<float> &B = *basis_;
  for (size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    const float *brow = B.data() + i * dim_;
    for (int d = 0; d < dim_; ++d)
      acc += static_cast<double>(brow[d]) * coeffs[d];
    A[i] = static_cast<float>(acc);
  }
  return A;
}

std::vector<float>
CpabField::coeffs_for_field(const std::vector<float> &field) const {
  const size_t rows = static_cast<size_t>(6) * n_triangles();
  if (field.size() != rows)
    throw std::invalid_argument("coeffs_for_field: field size mismatch");
  std::vector<float> theta(dim_, 0.0f);
  const std::vector<float> &B = *basis_;
  for (size_t i = 0; i < rows; ++i)
    for (int d = 0; d < dim_; ++d)
      theta[d] += B[i * dim_ + d] * field[i];
  return theta;
}

int CpabField::locate(float x, float y) const {
  int cx = static_cast<int>(std::floor((x + 1.0f) * 0.5f * nx_));
  int cy = static_cast<int>(std::floor((y + 1.0f) * 0.5f * ny_));
  cx = std::min(std::max(cx, 0), nx_ - 1);
  cy = std::min(std::max(cy, 0), ny_ - 1);
  const CellGeom g = cell_geom(nx_, ny_, cx, cy);
  const float u = (x - g.cx) * nx_; // local coords, cell half-size = 1/n
  const float v = (y - g.cy) * ny_;
  int k;
  if (std::fabs(u) >= std::fabs(v))
    k = u >= 0.0f ? 1 : 3;
  else
    k = v >= 0.0f ? 2 : 0;
  return 4 * (cy * nx_ + cx) + k;
}

void CpabField::velocity_at(const std::vector<float> &A, float x, float y,
                            float &vx, float &vy) const {
  const float *a = A.data() + static_cast<size_t>(6) * locate(x, y);
  vx = a[0] * x + a[1] * y + a[2];
  vy = a[3] * x + a[4] * y + a[5];
}

Tensor cpab_warp_grid(const CpabField &f, const Tensor &grid) {
  const Shape gs = grid.shape();
  const size_t P = static_cast<size_t>(gs.h) * gs.w;
  const int n_steps = f.n_steps();
  const float h = 1.0f / static_cast<float>(n_steps);
  const std::vector<float> A = f.velocity_matrices();

  // Record the trajectory for the unrolled backward sweep.
  std::vector<float> traj(static_cast<size_t>(n_steps) * P * 2);
  std::vector<int32_t> tris(static_cast<size_t>(n_steps) * P);
  std::vector<float> out(2 * P);
  for (size_t i = 0; i < P; ++i) {
    float x = grid.data()[i];
    float y = grid.data()[P + i];
    for (int k = 0; k < n_steps; ++k) {
      const int t = f.locate(x, y);
      traj[(static_cast<size_t>(k) * P + i) * 2] = x;
      traj[(static_cast<size_t>(k) * P + i) * 2 + 1] = y;
      tris[static_cast<size_t>(k) * P + i] = t;
      const float *a = A.data() + static_cast<size_t>(6) * t;
      const float vx = a[0] * x + a[1] * y + a[2];
      const float vy = a[3] * x + a[4] * y + a[5];
      x += h * vx;
      y += h * vy;
    }
    out[i] = x;
    out[P + i] = y;
  }

  auto basis = std::make_shared<std::vector<float>>(f.basis());
  const int dim = f.dim();
  const int n_tri = f.n_triangles();
  return make_op(
      gs, std::move(out), {f.coeffs(), grid},
      [=, traj = std::move(traj),
       tris = std::move(tris)](detail::TensorNode &self) {
        const auto &coeffs = self.parents[0];
        const auto &grid = self.parents[1];
        const float *go_x = self.grad.data();
        const float *go_y = self.grad.data() + P;

        std::vector<double> gA(static_cast<size_t>(6) * n_tri, 0.0);
        std::vector<float> ggrid(2 * P);
        for (size_t i = 0; i < P; ++i) {
          float gx = go_x[i];
          float gy = go_y[i];
          for (int k = n_steps - 1; k >= 0; --k) {
            const int t = tris[static_cast<size_t>(k) * P + i];
            const float x = traj[(static_cast<size_t>(k) * P + i) * 2];
            const float y = traj[(static_cast<size_t>(k) * P + i) * 2 + 1];
            const float *a = A.data() + static_cast<size_t>(6) * t;
            double *g = gA.data() + static_cast<size_t>(6) * t;
            g[0] += static_cast<double>(h) * gx * x;
            g[1] += static_cast<double>(h) * gx * y;
            g[2] += static_cast<double>(h) * gx;
            g[3] += static_cast<double>(h) * gy * x;
            g[4] += static_cast<double>(h) * gy * y;
            g[5] += static_cast<double>(h) * gy;
            // z_{k+1} = z_k + h A z_k => dz_k = (I + h A_xy)^T dz_{k+1}
            const float ngx = gx * (1.0f + h * a[0]) + gy * h * a[3];
            const float ngy = gx * h * a[1] + gy * (1.0f + h * a[4]);
            gx = ngx;
            gy = ngy;
          }
          ggrid[i] = gx;
          ggrid[P + i] = gy;
        }
        if (coeffs->requires_grad) {
          std::vector<float> gtheta(dim, 0.0f);
          for (size_t r = 0; r < gA.size(); ++r) {
            const float *brow = basis->data() + r * dim;
            for (int d = 0; d < dim; ++d)
              gtheta[d] += brow[d] * static_cast<float>(gA[r]);
          }
          accumulate_grad(coeffs, gtheta.data());
        }
        if (grid->requires_grad)
          accumulate_grad(grid, ggrid.data());
      });
}

TpsParams TpsParams::lattice(int k, float lambda) {
  if (k < 2)
    throw std::invalid_argument("TpsParams: lattice needs k >= 2");
  TpsParams t;
  t.k = k;
  t.lambda = lambda;
  t.control_x.reserve(static_cast<size_t>(k) * k);
  t.control_y.reserve(static_cast<size_t>(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      t.control_x.push_back(-1.0f + 2.0f * j / (k - 1));
      t.control_y.push_back(-1.0f + 2.0f * i / (k - 1));
    }
  t.displacements = Tensor::zeros(Shape{1, 1, k * k, 2}, true);
  return t;
}

namespace {

inline double tps_u(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

// d/d(r2) of r2 log r2; the radial gradient term 2*(p-c)*(log r2 + 1)
// vanishes in the limit r2 -> 0.
inline double tps_du(double r2) {
  return r2 > 1e-12 ? std::log(r2) + 1.0 : 0.0;
}

} // namespace

Tensor tps_warp_grid(const TpsParams &t, const Tensor &grid) {
  const Shape gs = grid.shape();
  const size_t P = static_cast<size_t>(gs.h) * gs.w;
  const int N = t.k * t.k;
  const int M = N + 3;

  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(M, M);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const double dx = static_cast<double>(t.control_x[i]) - t.control_x[j];
      const double dy = static_cast<double>(t.control_y[i]) - t.control_y[j];
      L(i, j) = tps_u(dx * dx + dy * dy);
    }
    L(i, i) += t.lambda;
    L(i, N) = L(N, i) = 1.0;
    L(i, N + 1) = L(N + 1, i) = t.control_x[i];
    L(i, N + 2) = L(N + 2, i) = t.control_y[i];
  }
  auto lu = std::make_shared<Eigen::FullPivLU<Eigen::MatrixXd>>(L);
  if (!lu->isInvertible())
    throw std::runtime_error("tps_warp_grid: singular TPS system");

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(M, 2);
  const float *disp = t.displacements.data();
  for (int i = 0; i < N; ++i) {
    rhs(i, 0) = disp[2 * i];
    rhs(i, 1) = disp[2 * i + 1];
  }
  auto w = std::make_shared<Eigen::MatrixXd>(lu->solve(rhs));

  const float *gx = grid.data();
  const float *gy = grid.data() + P;
  std::vector<float> out(2 * P);
  auto cx = t.control_x;
  auto cy = t.control_y;
  for (size_t p = 0; p < P; ++p) {
    const double x = gx[p], y = gy[p];
    double dx = (*w)(N, 0) + (*w)(N + 1, 0) * x + (*w)(N + 2, 0) * y;
    double dy = (*w)(N, 1) + (*w)(N + 1, 1) * x + (*w)(N + 2, 1) * y;
    for (int i = 0; i < N; ++i) {
      const double r2 =
          (x - cx[i]) * (x - cx[i]) + (y - cy[i]) * (y - cy[i]);
      const double u = tps_u(r2);
      dx += (*w)(i, 0) * u;
      dy += (*w)(i, 1) * u;
    }
    out[p] = static_cast<float>(x + dx);
    out[P + p] = static_cast<float>(y + dy);
  }

  return make_op(
      gs, std::move(out), {t.displacements, grid},
      [=](detail::TensorNode &self) {
        const auto &disp = self.parents[0];
        const auto &grid = self.parents[1];
        const float *gx = grid->data.data();
        const float *gy = grid->data.data() + P;
        const float *go_x = self.grad.data();
        const float *go_y = self.grad.data() + P;

        if (disp->requires_grad) {
          // dLoss/dw, then back through w = L^-1 [d;0] (L symmetric).
          Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(M, 2);
          for (size_t p = 0; p < P; ++p) {
            const double x = gx[p], y = gy[p];
            for (int i = 0; i < N; ++i) {
              const double r2 =
                  (x - cx[i]) * (x - cx[i]) + (y - cy[i]) * (y - cy[i]);
              const double u = tps_u(r2);
              gw(i, 0) += go_x[p] * u;
              gw(i, 1) += go_y[p] * u;
            }
            gw(N, 0) += go_x[p];
            gw(N + 1, 0) += go_x[p] * x;
            gw(N + 2, 0) += go_x[p] * y;
            gw(N, 1) += go_y[p];
            gw(N + 1, 1) += go_y[p] * x;
            gw(N + 2, 1) += go_y[p] * y;
          }
          const Eigen::MatrixXd gd = lu->solve(gw);
          std::vector<float> d(static_cast<size_t>(N) * 2);
          for (int i = 0; i < N; ++i) {
            d[2 * i] = static_cast<float>(gd(i, 0));
            d[2 * i + 1] = static_cast<float>(gd(i, 1));
          }
          accumulate_grad(disp, d.data());
        }

        if (grid->requires_grad) {
          std::vector<float> d(2 * P);
          for (size_t p = 0; p < P; ++p) {
            const double x = gx[p], y = gy[p];
            // Jacobian of the displacement surface at (x,y).
            double jxx = (*w)(N + 1, 0), jxy = (*w)(N + 2, 0);
            double jyx = (*w)(N + 1, 1), jyy = (*w)(N + 2, 1);
            for (int i = 0; i < N; ++i) {
              const double ex = x - cx[i], ey = y - cy[i];
              const double du = tps_du(ex * ex + ey * ey);
              jxx += (*w)(i, 0) * 2.0 * ex * du;
              jxy += (*w)(i, 0) * 2.0 * ey * du;
              jyx += (*w)(i, 1) * 2.0 * ex * du;
              jyy += (*w)(i, 1) * 2.0 * ey * du;
            }
            d[p] = static_cast<float>(go_x[p] * (1.0 + jxx) + go_y[p] * jyx);
            d[P + p] =
                static_cast<float>(go_x[p] * jxy + go_y[p] * (1.0 + jyy));
          }
          accumulate_grad(grid, d.data());
        }
      });
}

DeformationStack::DeformationStack(int cpab_cells_x, int cpab_cells_y,
                                   int cpab_steps, int tps_k, float tps_lambda)
    : affine(AffineParams::identity()),
      cpab(cpab_cells_x, cpab_cells_y, cpab_steps),
      tps(TpsParams::lattice(tps_k, tps_lambda)) {}

std::vector<Tensor> DeformationStack::enabled_parameters() const {
  std::vector<Tensor> params;
  if (affine_enabled)
    params.push_back(affine.theta);
  if (cpab_enabled)
    params.push_back(cpab.coeffs());
  if (tps_enabled)
    params.push_back(tps.displacements);
  return params;
}

Tensor deformation_grid(const DeformationStack &stack, int h, int w) {
  Tensor grid = identity_grid(h, w);
  if (stack.affine_enabled)
    grid = affine_warp_grid(stack.affine, grid);
  if (stack.cpab_enabled)
    grid = cpab_warp_grid(stack.cpab, grid);
  if (stack.tps_enabled)
    grid = tps_warp_grid(stack.tps, grid);
  return grid;
}

Tensor apply_deformation(const DeformationStack &stack, const Tensor &rgb) {
  const Shape s = rgb.shape();
  return grid_sample_bilinear(rgb, deformation_grid(stack, s.h, s.w));
}

ImageBuffer rg_overlay(const Tensor &warped_guide, const Tensor &modality) {
  const Shape gs = warped_guide.shape();
  Tensor up = resize_bicubic(modality, gs.h, gs.w);
  ImageBuffer img;
  img.height = gs.h;
  img.width = gs.w;
  img.channels = 3;
  img.data.assign(static_cast<size_t>(3) * gs.h * gs.w, 0.0f);
  const size_t plane = static_cast<size_t>(gs.h) * gs.w;
  for (size_t i = 0; i < plane; ++i) {
    img.data[i] = std::clamp(warped_guide.data()[i], 0.0f, 1.0f);
    img.data[plane + i] = std::clamp(up.data()[i], 0.0f, 1.0f);
  }
  return img;
}

} // namespace cmsr
