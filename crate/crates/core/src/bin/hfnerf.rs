use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, FromArgMatches, Parser, Subcommand};

use hfnerf::autodiff::load_checkpoint;
use hfnerf::config::{RunConfig, KEYS};
use hfnerf::dataset::{self, generate_dataset, load_dataset, GenOptions, HeatmapStack, BONES};
use hfnerf::evaluation::{evaluate, render_view};
use hfnerf::field::FieldParams;
use hfnerf::image::RgbImage;
use hfnerf::skeleton::{extract_skeleton, Skeleton2D, SkeletonParams};
use hfnerf::training::{train, FINAL_CHECKPOINT};
use hfnerf::{Error, Result};

#[derive(Parser)]
#[command(name = "hfnerf", version, about = "Heatmap-distilled radiance fields at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    GenData(GenArgs),
    /// Train a field on a dataset.
    Train(TrainArgs),
    /// Render one view of a dataset with a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on the test views.
    Eval(EvalArgs),
    /// Extract a 2D skeleton from a heatmap stack.
    Skeleton(SkeletonArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    views_train: usize,
    #[arg(long, default_value_t = 2)]
    views_test: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Teacher spread in pixels [default: 2 px per 64 px of image size]
    #[arg(long)]
    sigma_h: Option<f64>,
    /// Zero the teacher channels of joints hidden behind other limbs.
    #[arg(long)]
    occlusion_cull: bool,
    #[arg(long, default_value = "png", value_parser = ["png", "ppm"])]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

/// One optional flag per config key, e.g. `--lambda_h 0.3`.
struct Overrides(Vec<(String, String)>);

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        Ok(Overrides(
            KEYS.iter()
                .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
                .collect(),
        ))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(mut cmd: clap::Command) -> clap::Command {
        for key in KEYS {
            let mut arg = clap::Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help_heading("Config overrides");
            let dashed = key.replace('_', "-");
            if dashed != key {
                arg = arg.alias(&*dashed.leak());
            }
            cmd = cmd.arg(arg);
        }
        cmd
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    view: usize,
    /// Config file [default: config.txt next to the checkpoint]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Config file [default: config.txt next to the checkpoint]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SkeletonArgs {
    #[arg(long)]
    heatmaps: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    sigma_g: f64,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    /// Dataset whose bone table to use [default: built-in 16-joint table]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write an SVG overlay here.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Background image referenced by the SVG overlay.
    #[arg(long, requires = "svg")]
    image: Option<String>,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

fn resolve_config(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in &overrides.0 {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_config(title: &str, lines: &str) {
    println!("# {title}");
    print!("{lines}");
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn gen_data(a: &GenArgs) -> Result<()> {
    let opts = GenOptions {
        seed: a.seed,
        n_train: a.views_train,
        n_test: a.views_test,
        size: a.size,
        sigma_h: a.sigma_h,
        occlusion_cull: a.occlusion_cull,
        image_ext: a.format.clone(),
    };
    print_config(
        "gen-data",
        &format!(
            "seed = {}\nviews_train = {}\nviews_test = {}\nsize = {}\nsigma_h = {}\nocclusion_cull = {}\nformat = {}\nout = {}\n",
            opts.seed,
            opts.n_train,
            opts.n_test,
            opts.size,
            opts.resolved_sigma_h(),
            opts.occlusion_cull,
            opts.image_ext,
            a.out.display()
        ),
    );
    let m = generate_dataset(&opts, &a.out)?;
    println!("wrote {} views to {}", m.views.len(), a.out.display());
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
    let text = cfg.to_text();
    print_config("train", &text);
    let data = load_dataset(&a.data)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.txt"), &text)?;
    let result = train(&data, &cfg.field, &cfg.train, Some(&a.out), |row| {
        println!(
            "iter {:>6}  l_c {:.6}  l_h {:.6}  total {:.6}",
            row.iter, row.terms.l_c, row.terms.l_h, row.terms.total
        );
    })?;
    println!(
        "wrote {} after {} iterations",
        a.out.join(FINAL_CHECKPOINT).display(),
        result.log.last().map_or(0, |r| r.iter)
    );
    Ok(())
}

/// Config for a checkpoint: an explicit file, else `config.txt` beside it.
fn checkpoint_config(ckpt: &Path, explicit: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let sibling = ckpt.parent().map(|d| d.join("config.txt"));
    let file = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => sibling.filter(|p| p.is_file()),
    };
    resolve_config(file.as_deref(), overrides)
}

fn load_params(ckpt: &Path, cfg: &RunConfig) -> Result<FieldParams> {
    FieldParams::from_named(&cfg.field, load_checkpoint(ckpt)?)
}

fn run_render(a: &RenderArgs) -> Result<()> {
    let cfg = checkpoint_config(&a.ckpt, a.config.as_deref(), &a.overrides)?;
    print_config("render", &format!("{}view = {}\n", cfg.to_text(), a.view));
    let data = load_dataset(&a.data)?;
    let params = load_params(&a.ckpt, &cfg)?;
    let out = render_view(&params, &data, a.view, cfg.eval_samples)?;
    create_dir(&a.out)?;
    out.image.save(&a.out.join("rgb.png"))?;
    out.heatmaps.save(&a.out.join("heatmaps.hfheat"))?;
    let (w, h) = (out.image.width, out.image.height);
    let opacity = RgbImage::from_fn(w, h, |u, v| [out.opacity[v * w + u]; 3]);
    opacity.save(&a.out.join("opacity.png"))?;
    println!("wrote rgb.png, heatmaps.hfheat and opacity.png to {}", a.out.display());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let cfg = checkpoint_config(&a.ckpt, a.config.as_deref(), &a.overrides)?;
    print_config("eval", &cfg.to_text());
    let data = load_dataset(&a.data)?;
    let params = load_params(&a.ckpt, &cfg)?;
    let report = evaluate(&params, &data, &cfg)?;
    create_dir(&a.out)?;
    let path = a.out.join("metrics.json");
    write_file(&path, report.to_json())?;
    for v in &report.views {
        println!(
            "view {:>3}  psnr {:.3}  ssim {:.4}  mse_color {:.6}  mse_heat {:.6}  pck {:.3}",
            v.view, v.psnr.0, v.ssim, v.mse_color, v.mse_heat, v.pck
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run_skeleton(a: &SkeletonArgs) -> Result<()> {
    let params = SkeletonParams { sigma_g: a.sigma_g, tau: a.tau };
    params.validate()?;
    print_config(
        "skeleton",
        &format!("heatmaps = {}\nsigma_g = {}\ntau = {}\n", a.heatmaps.display(), a.sigma_g, a.tau),
    );
    let stack = HeatmapStack::load(&a.heatmaps)?;
    let bones = match &a.data {
        Some(d) => {
            let path = dataset::resolve_manifest_path(d);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let m: dataset::DatasetManifest =
                serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
            m.bones
        }
        None if stack.joints == dataset::JOINT_COUNT => BONES.to_vec(),
        None => Vec::new(),
    };
    let skel: Skeleton2D = extract_skeleton(&stack, &bones, &params)?;
    skel.save_json(&params, &a.out)?;
    if let Some(svg) = &a.svg {
        write_file(svg, skel.to_svg(stack.width, stack.height, a.image.as_deref()))?;
    }
    let found = skel.joints.iter().filter(|j| j.present).count();
    println!("{found} of {} joints present; wrote {}", stack.joints, a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Render(a) => run_render(a),
        Command::Eval(a) => run_eval(a),
        Command::Skeleton(a) => run_skeleton(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
