#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn fbopt(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_fbopt"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// LTI benchmark with `x' = -x + u + w`; `controller` and `extra` are spliced in verbatim.
pub fn lti_config(controller: &str, extra: &str) -> String {
    format!(
        r#"name = "lti-test"
seed = 3

[plant]
kind = "lti"
a = [[-1.0, 0.0], [0.0, -1.0]]
b = [[1.0, 0.0], [0.0, 1.0]]
e = [[1.0, 0.0], [0.0, 1.0]]

[cost.phi]
kind = "quadratic"
weights = [1.0, 1.0]
reference = [1.0, -0.5]

[cost.psi]
kind = "quadratic"
weights = [1.0, 1.0]
reference = [0.5, 1.0]

[cost.region]
kind = "box"
lower = [-2.0, -2.0]
upper = [2.0, 2.0]

[disturbance]
kind = "constant"
value = [0.2, -0.1]

[initial]
u0 = [-1.5, 1.8]

[stepper]
dt = 0.05
t1 = 400.0
record_every = 20

[controller]
{controller}

{extra}
"#
    )
}

pub fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}
