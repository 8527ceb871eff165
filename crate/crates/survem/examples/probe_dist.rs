use nalgebra::DVector;
use survem::assembly::{solve_problem, ProblemData};
use survem::chart::{Chart, Domain};
use survem::mesh::generate_voronoi_polymesh;
use survem::mms::ManufacturedCase;
use survem::vem::{projectors, StabKind};

fn slot_seed(seed: u64, level: usize, set: usize) -> u64 {
    seed ^ ((level as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        ^ ((set as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let level: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2);
    let lloyd: u32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5);
    let k = 4usize;
    let n_cells = [42usize, 171, 683, 2791, 11312][level];
    let mesh =
        generate_voronoi_polymesh(Domain::QuarterDisk, n_cells, 8, slot_seed(42, level, 0), lloyd)
            .unwrap();
    let case = ManufacturedCase::new(Chart::monge_trig(1.1, 0.0, 5).unwrap(), [0.0, 0.0], 0.0);
    let forcing = |s: [f64; 2]| case.forcing(s);
    let boundary = |s: [f64; 2]| case.solution(s);
    let data = ProblemData {
        chart: &case.chart,
        w_hat: case.w_hat,
        gamma: case.gamma,
        forcing: &forcing,
        boundary: &boundary,
    };
    let sol = solve_problem(&mesh, k, StabKind::DRecipe, &data).unwrap();

    // Per-cell squared L2 error binned by centroid radius.
    let mut bins = [0.0f64; 4];
    let mut cells: Vec<(f64, f64, f64)> = Vec::new(); // (err2, rho, diam)
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let verts = mesh.cell_vertex_coords(c);
        let proj = projectors(&verts, k, c).unwrap();
        let gmap = sol.dof_map.cell_to_global(&mesh, c);
        let u_loc = DVector::from_fn(gmap.len(), |i, _| sol.uh[gmap[i]]);
        let p = &proj.pi0_k * u_loc;
        let nk = proj.basis.len();
        let mut vals = vec![0.0; nk];
        let mut gx = vec![0.0; nk];
        let mut gy = vec![0.0; nk];
        let mut l2 = 0.0;
        for (pt, &w) in proj.rule.points.iter().zip(proj.rule.weights.iter()) {
            let weight = case.chart.metric_at(*pt).unwrap().sqrt_det_g;
            proj.basis.eval_with_grad_into(*pt, &mut vals, &mut gx, &mut gy);
            let mut ph = 0.0;
            for i in 0..nk {
                ph += p[i] * vals[i];
            }
            let du = case.solution(*pt) - ph;
            l2 += w * weight * du * du;
        }
        let (_, centroid, diam) = mesh.cell_geometry(c);
        let rho = centroid[0].hypot(centroid[1]);
        let bin = if rho < 0.7 {
            0
        } else if rho < 0.85 {
            1
        } else if rho < 0.95 {
            2
        } else {
            3
        };
        bins[bin] += l2;
        total += l2;
        cells.push((l2, rho, diam));
    }
    println!(
        "level {level} lloyd {lloyd}: n={} total_l2={:.4e}",
        mesh.n_cells(),
        total.sqrt()
    );
    println!(
        "  share by rho: <0.7 {:.1}%  0.7-0.85 {:.1}%  0.85-0.95 {:.1}%  >0.95 {:.1}%",
        100.0 * bins[0] / total,
        100.0 * bins[1] / total,
        100.0 * bins[2] / total,
        100.0 * bins[3] / total
    );
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (e, r, d) in cells.iter().take(6) {
        println!("  top cell: err2 {:.2e} ({:.1}%) rho {:.3} diam {:.3}", e, 100.0 * e / total, r, d);
    }
}
