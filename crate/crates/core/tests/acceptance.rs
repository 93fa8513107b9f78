//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::time::Instant;

use hl_couette::config::{Resolved, RunConfig};
use hl_couette::coupler::{self, Checkpoint, CoupledState, Discard, Observer, RunOutcome, Snapshot};
use hl_couette::diagnostics::{measure_f2_lipschitz, Status};
use hl_couette::grid::{SigmaGrid, SpaceTimeGrid};
use hl_couette::maxwell::{maxwell_p, maxwell_reference_run, maxwell_tau, ShearHistory};
use hl_couette::meso::{compute_d, compute_tau, HlOptions, MesoRow};
use hl_couette::model::{nondimensionalize, DensityPreset, PhysicalParams, ReferenceScales, ShearProtocol};
use hl_couette::output::{RunSummary, RunWriter};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Snapshot states kept in memory.
#[derive(Default)]
struct Keep(Vec<(f64, CoupledState)>);

impl Observer for Keep {
    fn snapshot(&mut self, snap: &Snapshot<'_>) -> hl_couette::Result<()> {
        self.0.push((snap.t, snap.state.clone()));
        Ok(())
    }
}

fn standard() -> RunConfig {
    RunConfig::default()
}

fn run_cfg(cfg: &RunConfig, hl: HlOptions, snapshot_every: usize) -> (Resolved, RunOutcome, Keep) {
    let mut r = cfg.resolve().expect("config resolves");
    r.problem.hl = hl;
    let mut opts = cfg.run_options().unwrap();
    opts.snapshot_every = snapshot_every;
    let mut keep = Keep::default();
    let out = coupler::run(&r.problem, &r.context, CoupledState::initial(&r.initial), &opts, &mut keep).expect("run completes");
    (r, out, keep)
}

struct Standard {
    resolved: Resolved,
    outcome: RunOutcome,
}

fn criterion_mass(s: &Standard) -> Verdict {
    // the run itself aborts if any row leaves 1e-10 at any macro step
    let e = s.outcome.state.stats.max_mass_error;
    verdict(e <= 1e-10, format!("max |mass - 1| over all steps and rows = {e:.3e} (tol 1e-10)"))
}

fn criterion_positivity(s: &Standard) -> Verdict {
    let st = &s.outcome.state.stats;
    verdict(
        st.min_before_clip >= -1e-12 && st.clipped_mass <= 1e-10,
        format!(
            "min p before clip = {:.3e} (>= -1e-12), clipped mass = {:.3e} (<= 1e-10)",
            st.min_before_clip, st.clipped_mass
        ),
    )
}

fn criterion_linf(s: &Standard, keep: &Keep) -> Verdict {
    let p0_sup = s.resolved.initial.density_sup();
    let alpha = s.resolved.problem.params.alpha;
    let mut worst = f64::INFINITY;
    for (t, state) in &keep.0 {
        let bound = p0_sup + (alpha / PI).sqrt() * t.sqrt() + 1e-6;
        let sup = state.rows.iter().map(MesoRow::sup).fold(0.0, f64::max);
        worst = worst.min(bound - sup);
    }
    let horizon = s.resolved.problem.space.horizon;
    let every_step = s.outcome.state.stats.max_density <= p0_sup + (alpha / PI).sqrt() * horizon.sqrt() + 1e-6;
    verdict(
        worst >= 0.0 && every_step,
        format!(
            "smallest gap to ||p0|| + sqrt(alpha t / pi) + 1e-6 over {} snapshots = {worst:.4e}; max p over all steps = {:.6}",
            keep.0.len(),
            s.outcome.state.stats.max_density
        ),
    )
}

fn criterion_d_floor(s: &Standard) -> Verdict {
    let eta = s.resolved.context.eta;
    let x = 1.0 / 2f64.sqrt();
    let y = 4.0 / 2f64.sqrt();
    let eta_oracle = (libm::erf(y) - libm::erf(x)) / libm::erf(y);
    let bound = eta / 2.0 * (-1.0f64).exp();
    let floor = bound - 1e-3 * eta;
    let min_d = s.outcome.state.stats.min_d;
    verdict(
        min_d >= floor && (eta - eta_oracle).abs() < 1e-12 && (bound - 0.05836).abs() < 5e-6,
        format!(
            "min D = {min_d:.6} >= (eta/2)e^-1 - 1e-3 eta = {floor:.6} (eta = {eta:.6}, erf oracle {eta_oracle:.6})"
        ),
    )
}

fn rel_l2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

/// τ(t_n, y_j) for n ≥ 1 from the meso solver, the Maxwell system and the
/// refined Maxwell reference, all at `σc = 0`.
fn zero_threshold_paths(dt: f64, n_sigma: usize) -> [Vec<Vec<f64>>; 3] {
    let mut cfg = standard();
    cfg.model.sigma_c = 0.0;
    cfg.grid.sigma_max = 8.0;
    cfg.grid.n_sigma = n_sigma;
    cfg.grid.dt = dt;
    let r = cfg.resolve().unwrap();
    let p = &r.problem;
    let mut state = CoupledState::initial(&r.initial);
    let mut meso = Vec::new();
    while state.step < p.space.n_steps() {
        state = coupler::coupled_step(&state, p).unwrap().0;
        meso.push(state.tau(&p.sigma));
    }
    let maxwell = coupler::run_maxwell(p, &r.initial, 1).unwrap();
    let tau0 = compute_tau(&MesoRow(r.initial.p0[0].clone()), &p.sigma);
    let reference =
        maxwell_reference_run(&p.params, &p.protocol, &p.space, &|_| 0.0, &|_| tau0, &p.picard, 1).unwrap();
    [meso, maxwell.tau[1..].to_vec(), reference.tau[1..].to_vec()]
}

fn criterion_zero_threshold() -> Verdict {
    let coarse = zero_threshold_paths(1e-3, 512);
    let fine = zero_threshold_paths(5e-4, 1024);
    // fine τ sampled at the coarse times
    let fine: Vec<Vec<Vec<f64>>> = fine.iter().map(|f| f.iter().skip(1).step_by(2).cloned().collect()).collect();
    let pairs = [(0, 1, "meso/maxwell"), (0, 2, "meso/reference"), (1, 2, "maxwell/reference")];
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, b, name) in pairs {
        let dc = rel_l2(&coarse[a], &coarse[b]);
        let df = rel_l2(&fine[a], &fine[b]);
        let shrink = dc / df;
        pass &= dc <= 0.02 && shrink >= 1.8;
        parts.push(format!("{name} {dc:.3e} -> {df:.3e} (x{shrink:.2})"));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_maxwell_closed_forms() -> Verdict {
    let unit = ShearHistory::constant(1.0);
    let ramp = ShearHistory::Protocol {
        gain: 1.0,
        offset: 0.0,
        protocol: ShearProtocol::Ramp {
            ramp_time: 4.0,
            plateau: 4.0,
        },
    };
    let mut tau_err: f64 = 0.0;
    for k in 0..=400 {
        let t = k as f64 * 0.01;
        tau_err = tau_err.max((maxwell_tau(0.0, &unit, t) - (1.0 - (-t).exp())).abs());
        // b(s) = s
        tau_err = tau_err.max((maxwell_tau(0.0, &ramp, t) - (t - 1.0 + (-t).exp())).abs());
    }
    let grid = SigmaGrid::new(16.0, 512, 0.0).unwrap();
    let mut p0 = DensityPreset::standard_gaussian().cell_averages(&grid, 0.0).unwrap();
    let m = grid.integrate(&p0);
    p0.iter_mut().for_each(|p| *p /= m);
    let p0 = MesoRow(p0);
    let mut mass_err: f64 = 0.0;
    for &b in &[0.0, 1.0, -2.0, 0.5] {
        for &t in &[0.1, 0.5, 1.0, 2.0] {
            let p = maxwell_p(&p0, &ShearHistory::constant(b), t, &grid, 1.0);
            mass_err = mass_err.max((p.mass(&grid) - 1.0).abs());
        }
    }
    verdict(
        tau_err <= 1e-12 && mass_err <= 1e-8,
        format!("max tau error vs 1 - e^-t and t - 1 + e^-t = {tau_err:.2e}; max |mass - 1| of the explicit density = {mass_err:.2e}"),
    )
}

fn criterion_comparison(s: &Standard, cfg: &RunConfig) -> Verdict {
    let nominal = s
        .outcome
        .reports
        .iter()
        .map(|r| r.entry("comparison").unwrap())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .unwrap();
    let ok = s.outcome.reports.iter().all(|r| r.entry("comparison").unwrap().status == Status::Pass);
    let mut faults = Vec::new();
    let mut detected = true;
    for (name, hl) in [
        ("sink x2", HlOptions { sink_scale: 2.0, advection_scale: 1.0 }),
        ("advection off", HlOptions { sink_scale: 1.0, advection_scale: 0.0 }),
    ] {
        let (_, out, _) = run_cfg(cfg, hl, 10);
        let worst = out
            .reports
            .iter()
            .map(|r| r.entry("comparison").unwrap().value)
            .fold(f64::INFINITY, f64::min);
        let failed = out.reports.iter().any(|r| r.entry("comparison").unwrap().status == Status::Fail);
        detected &= failed;
        faults.push(format!("{name}: min gap {worst:.3e} {}", if failed { "detected" } else { "MISSED" }));
    }
    verdict(
        ok && detected,
        format!(
            "min p - p_sub = {:.3e} vs -C(dsigma+dt) = {:.3e}; {}",
            nominal.value,
            -nominal.tolerance,
            faults.join(", ")
        ),
    )
}

fn criterion_moment(s: &Standard) -> Verdict {
    let mut residuals = Vec::new();
    let mut pass = true;
    for (n_sigma, dt) in [(512, 1e-3), (1024, 5e-4)] {
        let mut cfg = standard();
        cfg.grid.sigma_max = 8.0;
        cfg.grid.n_sigma = n_sigma;
        cfg.grid.dt = dt;
        let (r, out, _) = run_cfg(&cfg, HlOptions::default(), 100);
        let h = dt + r.problem.sigma.d_sigma();
        let res = out.state.stats.max_moment_residual;
        pass &= res <= cfg.diagnostics.moment_c * h;
        pass &= out.reports.iter().all(|r| r.entry("moment_identity").unwrap().status == Status::Pass);
        residuals.push((res, h));
    }
    let ratio = residuals[0].0 / residuals[1].0;
    pass &= ratio >= 1.8;
    verdict(
        pass,
        format!(
            "max residual {:.3e} (dt+dsigma {:.4}) -> {:.3e} (x{ratio:.2}), C = {}; standard window sigma_max = 4: {:.3e}",
            residuals[0].0,
            residuals[0].1,
            residuals[1].0,
            standard().diagnostics.moment_c,
            s.outcome.state.stats.max_moment_residual
        ),
    )
}

fn criterion_lipschitz() -> Verdict {
    let params = PhysicalParams::unit();
    let mut ratios = Vec::new();
    let mut pass = true;
    for horizon in [1.0 / 16.0, 0.25, 1.0] {
        let space = SpaceTimeGrid::new(63, 1.0, 1.0 / 4096.0, horizon).unwrap();
        let m = measure_f2_lipschitz(&|_, y| (PI * y).sin(), &|_, _| 0.0, &params, &space).unwrap();
        pass &= m.ratio <= 2.0 * horizon.sqrt() * 1.05;
        ratios.push((horizon, m.ratio));
    }
    let q1 = ratios[0].1 / ratios[1].1;
    let q2 = ratios[1].1 / ratios[2].1;
    pass &= q1 <= 0.55 && q2 <= 0.55;
    let list: Vec<String> = ratios
        .iter()
        .map(|(t, r)| format!("T={t}: {r:.4} (bound {:.4})", 2.0 * t.sqrt()))
        .collect();
    verdict(pass, format!("{}; successive quotients {q1:.3}, {q2:.3}", list.join(", ")))
}

fn criterion_picard(s: &Standard) -> Verdict {
    let st = &s.outcome.state.stats;
    let mut cfg = standard();
    cfg.grid.dt = 5e-4;
    let (_, half, _) = run_cfg(&cfg, HlOptions::default(), 200);
    let hs = &half.state.stats;
    verdict(
        st.max_picard_iterations <= 10 && st.max_picard_ratio < 0.5 && hs.max_picard_ratio < st.max_picard_ratio,
        format!(
            "at most {} iterations, max ratio {:.3e}; dt/2: max ratio {:.3e}",
            st.max_picard_iterations, st.max_picard_ratio, hs.max_picard_ratio
        ),
    )
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn written_run(cfg: &RunConfig, dir: &std::path::Path) {
    let r = cfg.resolve().unwrap();
    let opts = cfg.run_options().unwrap();
    let mut w = RunWriter::new(dir, cfg.to_json(), cfg.density_every().unwrap(), r.problem.space.n_steps(), r.context.clone());
    let out = coupler::run(&r.problem, &r.context, CoupledState::initial(&r.initial), &opts, &mut w).unwrap();
    let summary = RunSummary {
        schema: hl_couette::output::SCHEMA_VERSION,
        fingerprint: r.problem.fingerprint(),
        path: "meso".into(),
        config: serde_json::from_str(&cfg.to_json()).unwrap(),
        problem: r.problem.clone(),
        diagnostics: opts.diagnostics,
        eta: r.context.eta,
        validation: Some(r.validation.clone()),
        final_step: out.state.step,
        final_time: r.problem.space.horizon,
        worst_status: out.worst_status(),
        stats: Some(out.state.stats),
        reports: out.reports,
        snapshot_files: w.snapshot_files.clone(),
        density_files: w.density_files.clone(),
    };
    hl_couette::output::write_json(&dir.join("summary.json"), &summary).unwrap();
}

fn criterion_restart(s: &Standard) -> Verdict {
    let cfg = standard();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    written_run(&cfg, &a);
    written_run(&cfg, &b);
    let identical = dir_bytes(&a) == dir_bytes(&b);

    let r = &s.resolved;
    let mut opts = cfg.run_options().unwrap();
    opts.stop_step = Some(r.problem.space.n_steps() / 2);
    let half = coupler::run(&r.problem, &r.context, CoupledState::initial(&r.initial), &opts, &mut Discard).unwrap();
    let text = serde_json::to_string(&Checkpoint::new(&r.problem, &r.context, &half.state)).unwrap();
    let cp: Checkpoint = serde_json::from_str(&text).unwrap();
    cp.verify(&r.problem, &opts.diagnostics).unwrap();
    opts.stop_step = None;
    let resumed = coupler::run(&cp.problem, &cp.context, cp.state, &opts, &mut Discard).unwrap();
    let sigma = &r.problem.sigma;
    let diff = resumed
        .state
        .tau(sigma)
        .iter()
        .zip(s.outcome.state.tau(sigma))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    verdict(
        identical && diff <= 1e-12,
        format!(
            "rerun output files {}; checkpoint at t = 0.5 then resume: max |tau diff| = {diff:.2e}",
            if identical { "byte-identical" } else { "DIFFER" }
        ),
    )
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

fn criterion_nondim() -> Verdict {
    let mut worst_ulp = 0;
    for i in 0..400 {
        let f = |k: u32| 0.1 + ((i * 7919 + k as usize * 104729) % 1000) as f64 / 97.0;
        let p = PhysicalParams {
            rho: f(1),
            mu: f(2),
            g0: f(3),
            alpha: f(4),
            t0: f(5),
            sigma_c: f(6),
            length: f(7),
        };
        let back = nondimensionalize(&p).unwrap().redimensionalize();
        for (x, y) in [
            (p.rho, back.rho),
            (p.mu, back.mu),
            (p.g0, back.g0),
            (p.alpha, back.alpha),
            (p.t0, back.t0),
            (p.sigma_c, back.sigma_c),
            (p.length, back.length),
        ] {
            worst_ulp = worst_ulp.max(ulps(x, y));
        }
    }

    let (length, t0, sc) = (0.37, 2.9, 1.7);
    let mut dim = standard();
    dim.model = PhysicalParams {
        rho: sc * t0 * t0 / (length * length),
        mu: t0 * sc,
        g0: sc,
        alpha: sc * sc,
        t0,
        sigma_c: sc,
        length,
    };
    let scales = ReferenceScales::of(&dim.model);
    dim.protocol = standard().protocol.dimensional(&scales);
    dim.initial.density = DensityPreset::standard_gaussian().scaled(sc);
    dim.grid.dt = 1e-3 * t0;
    dim.grid.horizon = t0;
    dim.output.snapshot_cadence = 0.1 * t0;
    let (rd, dim_out, dim_keep) = run_cfg(&dim, HlOptions::default(), 100);
    let (rn, _, nd_keep) = run_cfg(&standard(), HlOptions::default(), 100);
    let mut field_err: f64 = 0.0;
    for ((td, sd), (tn, sn)) in dim_keep.0.iter().zip(&nd_keep.0) {
        field_err = field_err.max((td / t0 - tn).abs());
        let ud = sd.velocity.full_velocity(rd.problem.protocol.velocity(*td), &rd.problem.space);
        let un = sn.velocity.full_velocity(rn.problem.protocol.velocity(*tn), &rn.problem.space);
        for j in 0..ud.len() {
            field_err = field_err.max((ud[j] * t0 / length - un[j]).abs());
            let tau_d = compute_tau(&sd.rows[j], &rd.problem.sigma) / sc;
            field_err = field_err.max((tau_d - compute_tau(&sn.rows[j], &rn.problem.sigma)).abs());
            let d_d = compute_d(&sd.rows[j], &rd.problem.sigma, &rd.problem.params) * t0 / (sc * sc);
            field_err = field_err.max((d_d - compute_d(&sn.rows[j], &rn.problem.sigma, &rn.problem.params)).abs());
            for (pd, pn) in sd.rows[j].0.iter().zip(&sn.rows[j].0) {
                field_err = field_err.max((pd * sc - pn).abs());
            }
        }
    }
    let same_count = dim_keep.0.len() == nd_keep.0.len() && dim_out.state.step == 1000;
    verdict(
        worst_ulp <= 1 && field_err <= 1e-10 && same_count,
        format!(
            "round trip over 400 parameter sets within {worst_ulp} ulp; dimensional run (L = {length}, T0 = {t0}, sigma_c = {sc}) vs scaled run: max field difference {field_err:.2e} over {} snapshots",
            dim_keep.0.len()
        ),
    )
}

fn main() {
    let clock = Instant::now();
    let cfg = standard();
    let (resolved, outcome, keep) = run_cfg(&cfg, HlOptions::default(), 10);
    let s = Standard { resolved, outcome };
    let rows: Vec<(&str, Verdict)> = vec![
        ("mass conservation", criterion_mass(&s)),
        ("positivity", criterion_positivity(&s)),
        ("sup-norm bound", criterion_linf(&s, &keep)),
        ("diffusion floor", criterion_d_floor(&s)),
        ("zero-threshold equivalence", criterion_zero_threshold()),
        ("Maxwell closed forms", criterion_maxwell_closed_forms()),
        ("comparison sub-solution", criterion_comparison(&s, &cfg)),
        ("moment identity", criterion_moment(&s)),
        ("momentum-map Lipschitz bound", criterion_lipschitz()),
        ("Picard contraction", criterion_picard(&s)),
        ("determinism and restart", criterion_restart(&s)),
        ("non-dimensionalisation", criterion_nondim()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in rows.iter().enumerate() {
        println!("criterion {:>2} {:<30} {}  {}", i + 1, name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        rows.len() - failed,
        rows.len(),
        clock.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
