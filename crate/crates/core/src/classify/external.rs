use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{Classification, ClassifierModel, NormalizedRegion};
use crate::error::{Error, Result};

struct Pipe {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Routes normalized crops to a long-running classifier process.
///
/// For each crop a PNG is written to a scratch directory and its path is sent
/// as one line on the child's stdin. The child answers with one line,
/// `text|title|misseg <confidence>`.
pub struct ExternalClassifier {
    child: Mutex<Child>,
    pipe: Mutex<Pipe>,
    scratch: tempfile::TempDir,
    counter: AtomicU64,
}

impl ExternalClassifier {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self {
            child: Mutex::new(child),
            pipe: Mutex::new(Pipe { stdin, stdout }),
            scratch: tempfile::tempdir()?,
            counter: AtomicU64::new(0),
        })
    }

    fn crop_path(&self) -> PathBuf {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        self.scratch.path().join(format!("crop-{n:08}.png"))
    }
}

/// Parses one response line.
pub(crate) fn parse_response(line: &str) -> Result<Classification> {
    let mut it = line.split_whitespace();
    let (Some(class), Some(conf), None) = (it.next(), it.next(), it.next()) else {
        return Err(Error::Classifier(format!("malformed response {line:?}")));
    };
    let confidence: f64 = conf
        .parse()
        .map_err(|_| Error::Classifier(format!("bad confidence {conf:?}")))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Classifier(format!("confidence {confidence} outside [0, 1]")));
    }
    Ok(Classification {
        class: class.parse()?,
        confidence,
    })
}

impl ClassifierModel for ExternalClassifier {
    fn classify(&self, region: &NormalizedRegion) -> Result<Classification> {
        let path = self.crop_path();
        region.image.render(0, 255).save_png(&path)?;
        let mut pipe = self.pipe.lock().expect("classifier pipe poisoned");
        writeln!(pipe.stdin, "{}", path.display())?;
        pipe.stdin.flush()?;
        let mut line = String::new();
        if pipe.stdout.read_line(&mut line)? == 0 {
            return Err(Error::Classifier("classifier process closed its output".into()));
        }
        drop(pipe);
        let _ = std::fs::remove_file(&path);
        parse_response(line.trim_end())
    }
}

impl Drop for ExternalClassifier {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{classify_region, RegionClass};
    use crate::raster::Bitmap;

    #[test]
    fn response_grammar() {
        let c = parse_response("title 0.75").unwrap();
        assert_eq!((c.class, c.confidence), (RegionClass::Title, 0.75));
        assert_eq!(parse_response("misseg 1").unwrap().class, RegionClass::MisSegmented);
        assert!(parse_response("title").is_err());
        assert!(parse_response("heading 0.5").is_err());
        assert!(parse_response("text 1.5").is_err());
        assert!(parse_response("text 0.5 extra").is_err());
    }

    #[cfg(unix)]
    #[test]
    fn round_trip_through_a_shell_process() {
        let script = r#"while read p; do if [ -s "$p" ]; then echo "title 0.9"; else echo "text 0.1"; fi; done"#;
        let model = ExternalClassifier::spawn("sh", &["-c".into(), script.into()]).unwrap();
        let mut bm = Bitmap::new(10, 10);
        bm.set(4, 4, true);
        for _ in 0..3 {
            let c = classify_region(&model, &bm).unwrap();
            assert_eq!(c.class, RegionClass::Title);
            assert_eq!(c.confidence, 0.9);
        }
    }
}
