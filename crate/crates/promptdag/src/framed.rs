//! Environments over length-prefixed frames.
//!
//! A frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. The client sends one request frame and reads one reply:
//!
//! | request                                       | reply                                      |
//! |-----------------------------------------------|--------------------------------------------|
//! | `{"op":"hello"}`                              | `{"actions":[...],"manual":"..."}`         |
//! | `{"op":"reset"}`                              | `{"observation":"..."}`                    |
//! | `{"op":"step","action":"do","repeats":2}`     | `{"observation","reward","done","info"}`   |
//!
//! Any request may instead be answered with `{"error":"..."}`. The server
//! stops at end of input.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use promptdag_core::agent::{EnvError, Environment, StepOutcome};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Frames larger than this are refused.
pub const MAX_FRAME: usize = 16 << 20;

pub fn write_frame<W: Write>(out: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).ok().filter(|n| (*n as usize) <= MAX_FRAME);
    let len = len.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    out.write_all(&len.to_be_bytes())?;
    out.write_all(payload)?;
    out.flush()
}

/// `Ok(None)` on a clean end of input before a frame starts.
pub fn read_frame<R: Read>(input: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0; len];
    input.read_exact(&mut buf)?;
    Ok(Some(buf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello,
    Reset,
    Step { action: String, repeats: u32 },
}

fn handle<E: Environment + ?Sized>(env: &mut E, frame: &[u8]) -> Value {
    let request: Request = match serde_json::from_slice(frame) {
        Ok(r) => r,
        Err(e) => return json!({ "error": format!("bad request: {e}") }),
    };
    let result = match request {
        Request::Hello => Ok(json!({ "actions": env.actions(), "manual": env.manual() })),
        Request::Reset => env.reset().map(|observation| json!({ "observation": observation })),
        Request::Step { action, repeats } => {
            env.step(&action, repeats).map(|o| serde_json::to_value(o).expect("outcomes serialize"))
        }
    };
    result.unwrap_or_else(|EnvError(e)| json!({ "error": e }))
}

/// Serves `env` until `input` ends.
pub fn serve<E, R, W>(env: &mut E, input: R, output: W) -> io::Result<()>
where
    E: Environment + ?Sized,
    R: Read,
    W: Write,
{
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    while let Some(frame) = read_frame(&mut input)? {
        let reply = handle(env, &frame);
        write_frame(&mut output, reply.to_string().as_bytes())?;
    }
    Ok(())
}

/// Client side of the protocol. Actions and manual are fetched once, when
/// connecting.
pub struct FramedEnv<R: Read, W: Write> {
    input: R,
    output: W,
    actions: Vec<String>,
    manual: String,
    child: Option<Child>,
}

impl<R: Read, W: Write> FramedEnv<R, W> {
    pub fn connect(input: R, output: W) -> Result<Self, EnvError> {
        let mut env = FramedEnv { input, output, actions: Vec::new(), manual: String::new(), child: None };
        let hello = env.call(&Request::Hello)?;
        env.actions = serde_json::from_value(hello["actions"].clone()).map_err(|e| EnvError(format!("bad hello: {e}")))?;
        env.manual = hello["manual"].as_str().ok_or_else(|| EnvError("bad hello: missing manual".into()))?.to_string();
        Ok(env)
    }

    fn call(&mut self, request: &Request) -> Result<Value, EnvError> {
        let io_err = |e: io::Error| EnvError(format!("environment connection: {e}"));
        let payload = serde_json::to_vec(request).expect("requests serialize");
        write_frame(&mut self.output, &payload).map_err(io_err)?;
        let frame = read_frame(&mut self.input).map_err(io_err)?.ok_or_else(|| EnvError("environment closed the connection".into()))?;
        let reply: Value = serde_json::from_slice(&frame).map_err(|e| EnvError(format!("bad reply: {e}")))?;
        match reply.get("error").and_then(Value::as_str) {
            Some(e) => Err(EnvError(e.to_string())),
            None => Ok(reply),
        }
    }
}

impl FramedEnv<BufReader<ChildStdout>, ChildStdin> {
    /// Runs `command` through `sh -c` and talks to it over its stdio.
    pub fn spawn(command: &str) -> Result<Self, EnvError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EnvError(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        match FramedEnv::connect(stdout, stdin) {
            Ok(mut env) => {
                env.child = Some(child);
                Ok(env)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }
}

impl<R: Read, W: Write> Environment for FramedEnv<R, W> {
    fn reset(&mut self) -> Result<String, EnvError> {
        let reply = self.call(&Request::Reset)?;
        reply["observation"].as_str().map(String::from).ok_or_else(|| EnvError("bad reply: missing observation".into()))
    }

    fn step(&mut self, action: &str, repeats: u32) -> Result<StepOutcome, EnvError> {
        let reply = self.call(&Request::Step { action: action.into(), repeats })?;
        serde_json::from_value(reply).map_err(|e| EnvError(format!("bad reply: {e}")))
    }

    fn actions(&self) -> Vec<String> {
        self.actions.clone()
    }

    fn manual(&self) -> String {
        self.manual.clone()
    }
}

impl<R: Read, W: Write> Drop for FramedEnv<R, W> {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin ends the server loop; kill covers servers that ignore it.
            drop(child.stdin.take());
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use promptdag_core::env::MiniForage;
    use std::io::Cursor;

    #[test]
    fn frames_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        let mut r = Cursor::new(buf);
        assert_eq!(read_frame(&mut r).unwrap().as_deref(), Some(&b"hello"[..]));
        assert_eq!(read_frame(&mut r).unwrap().as_deref(), Some(&b""[..]));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut r = Cursor::new(vec![0, 0, 0, 9, b'x']);
        assert!(read_frame(&mut r).is_err());
    }

    fn request_bytes(requests: &[Request]) -> Vec<u8> {
        let mut buf = Vec::new();
        for r in requests {
            write_frame(&mut buf, &serde_json::to_vec(r).unwrap()).unwrap();
        }
        buf
    }

    #[test]
    fn server_replies_match_in_process_env() {
        let requests = [Request::Hello, Request::Reset, Request::Step { action: "move_west".into(), repeats: 1 }];
        let mut out = Vec::new();
        serve(&mut MiniForage::new(0), Cursor::new(request_bytes(&requests)), &mut out).unwrap();
        let mut replies = Cursor::new(out);
        let mut next = || serde_json::from_slice::<Value>(&read_frame(&mut replies).unwrap().unwrap()).unwrap();
        let mut local = MiniForage::new(0);
        assert_eq!(next()["actions"].as_array().unwrap().len(), local.actions().len());
        assert_eq!(next()["observation"], local.reset().unwrap());
        let outcome: StepOutcome = serde_json::from_value(next()).unwrap();
        assert_eq!(outcome, local.step("move_west", 1).unwrap());
    }

    #[test]
    fn env_errors_become_error_replies() {
        let requests = [Request::Step { action: "fly".into(), repeats: 1 }];
        let mut out = Vec::new();
        serve(&mut MiniForage::new(0), Cursor::new(request_bytes(&requests)), &mut out).unwrap();
        let reply: Value = serde_json::from_slice(&read_frame(&mut Cursor::new(out)).unwrap().unwrap()).unwrap();
        assert!(reply["error"].as_str().unwrap().contains("unknown action"));
    }
}
