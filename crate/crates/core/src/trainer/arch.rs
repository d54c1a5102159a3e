use std::fmt;
use std::fs;
use std::path::Path;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv { input: usize, output: usize, kernel: usize, stride: usize, padding: usize },
    Linear { input: usize, output: usize },
    Relu,
    LogSoftmax,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Conv { input, output, kernel, stride, padding } => {
                write!(f, "C {input} {output} {kernel} {stride} {padding}")
            }
            Layer::Linear { input, output } => write!(f, "L {input} {output}"),
            Layer::Relu => write!(f, "R"),
            Layer::LogSoftmax => write!(f, "LSM"),
        }
    }
}

/// Network layers, one per line:
///
/// ```text
/// C <in> <out> <kernel> <stride> <padding>
/// L <in> <out>
/// R
/// LSM
/// ```
///
/// Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub layers: Vec<Layer>,
}

impl ArchSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut layers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| TrainError::Arch(format!("line {}: {m}", i + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            let nums = |want: usize| -> Result<Vec<usize>, TrainError> {
                if f.len() != want + 1 {
                    return Err(err(format!("{} takes {want} integers, got {:?}", f[0], &f[1..])));
                }
                f[1..].iter().map(|s| s.parse::<usize>().map_err(|_| err(format!("bad integer {s:?}")))).collect()
            };
            let layer = match f[0] {
                "C" => {
                    let v = nums(5)?;
                    Layer::Conv { input: v[0], output: v[1], kernel: v[2], stride: v[3], padding: v[4] }
                }
                "L" => {
                    let v = nums(2)?;
                    Layer::Linear { input: v[0], output: v[1] }
                }
                "R" => {
                    nums(0)?;
                    Layer::Relu
                }
                "LSM" => {
                    nums(0)?;
                    Layer::LogSoftmax
                }
                other => return Err(err(format!("unknown layer {other:?}"))),
            };
            layers.push(layer);
        }
        let spec = Self { layers };
        spec.check_chain()?;
        Ok(spec)
    }

    fn check_chain(&self) -> Result<(), TrainError> {
        let mut width: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Conv { input, output, kernel, stride, .. } => {
                    if input == 0 || output == 0 || kernel == 0 || stride == 0 {
                        return Err(TrainError::Arch(format!("layer {i}: zero size in `{layer}`")));
                    }
                    chain(i, &mut width, input, output)?;
                }
                Layer::Linear { input, output } => {
                    if input == 0 || output == 0 {
                        return Err(TrainError::Arch(format!("layer {i}: zero size in `{layer}`")));
                    }
                    chain(i, &mut width, input, output)?;
                }
                Layer::Relu | Layer::LogSoftmax => {}
            }
        }
        if width.is_none() {
            return Err(TrainError::Arch("architecture has no conv or linear layer".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match *l {
                Layer::Conv { input, .. } | Layer::Linear { input, .. } => Some(input),
                _ => None,
            })
            .expect("validated arch")
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match *l {
                Layer::Conv { output, .. } | Layer::Linear { output, .. } => Some(output),
                _ => None,
            })
            .expect("validated arch")
    }

    /// Output frames for `t` input frames, `None` if a conv would see an
    /// input shorter than its kernel.
    pub fn output_frames(&self, t: usize) -> Option<usize> {
        self.layers.iter().try_fold(t, |t, l| match *l {
            Layer::Conv { kernel, stride, padding, .. } => {
                let padded = t + 2 * padding;
                (padded >= kernel).then(|| (padded - kernel) / stride + 1)
            }
            _ => Some(t),
        })
    }

    pub fn to_text(&self) -> String {
        self.layers.iter().map(|l| format!("{l}\n")).collect()
    }
}

fn chain(i: usize, width: &mut Option<usize>, input: usize, output: usize) -> Result<(), TrainError> {
    if let Some(w) = *width {
        if w != input {
            return Err(TrainError::Arch(format!(
                "layer {i}: expects {input} inputs but the previous layer produces {w}"
            )));
        }
    }
    *width = Some(output);
    Ok(())
}
