//! Interactive graph builder.
//!
//! [`BuilderSession`] holds the working node list and rejects any edit that
//! would make it structurally invalid. [`Wizard`] drives a session from a
//! line-oriented terminal.

use std::io::{self, BufRead, Write};
use std::path::Path;

use promptdag_core::graph::{validate_defs, DEFAULT_COMPOSE, DEFAULT_MODEL};
use promptdag_core::store::DbSchema;
use promptdag_core::{Finding, HookRef, HookRegistry, NodeDef, NodeId, ValidationReport};
use thiserror::Error;

use crate::graph_file::{GraphFile, GraphFileError};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("node `{0}` does not exist")]
    NoSuchNode(NodeId),
    #[error("cannot remove `{node}`: {dependents} depend(s) on it")]
    HasDependents { node: NodeId, dependents: String },
    #[error("edit rejected:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    File(#[from] GraphFileError),
}

/// Working graph definition with undo history.
///
/// Every state the session holds has no structural findings; only schema
/// findings (undeclared `$db…$` keys) can remain, and they are reported on
/// save.
pub struct BuilderSession {
    nodes: Vec<NodeDef>,
    undo: Vec<Vec<NodeDef>>,
    dirty: bool,
    hooks: HookRegistry,
    schema: Option<DbSchema>,
}

impl BuilderSession {
    pub fn new(hooks: HookRegistry, schema: Option<DbSchema>) -> Self {
        BuilderSession { nodes: Vec::new(), undo: Vec::new(), dirty: false, hooks, schema }
    }

    /// Starts from an existing file, which must itself be structurally valid.
    pub fn open(file: GraphFile, hooks: HookRegistry, schema: Option<DbSchema>) -> Result<Self, BuildError> {
        let mut session = Self::new(hooks, schema);
        let report = session.structural(&file.nodes);
        if !report.is_empty() {
            return Err(BuildError::Invalid(report));
        }
        session.nodes = file.nodes;
        Ok(session)
    }

    pub fn nodes(&self) -> &[NodeDef] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&NodeDef> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn hooks(&self) -> &HookRegistry {
        &self.hooks
    }

    fn structural(&self, nodes: &[NodeDef]) -> ValidationReport {
        let mut report = validate_defs(nodes, &self.hooks, None);
        report.findings.retain(|f| !matches!(f, Finding::UnresolvedKey { .. }));
        report
    }

    fn commit(&mut self, next: Vec<NodeDef>) -> Result<(), BuildError> {
        let report = self.structural(&next);
        if !report.is_empty() {
            return Err(BuildError::Invalid(report));
        }
        self.undo.push(std::mem::replace(&mut self.nodes, next));
        self.dirty = true;
        Ok(())
    }

    pub fn add_node(&mut self, def: NodeDef) -> Result<(), BuildError> {
        let mut next = self.nodes.clone();
        next.push(def);
        self.commit(next)
    }

    /// Replaces the node with the same id, keeping its position.
    pub fn edit_node(&mut self, def: NodeDef) -> Result<(), BuildError> {
        let pos = self.nodes.iter().position(|n| n.id == def.id).ok_or_else(|| BuildError::NoSuchNode(def.id.clone()))?;
        let mut next = self.nodes.clone();
        next[pos] = def;
        self.commit(next)
    }

    pub fn remove_node(&mut self, id: &str) -> Result<(), BuildError> {
        if self.node(id).is_none() {
            return Err(BuildError::NoSuchNode(id.into()));
        }
        let dependents: Vec<&str> = self.nodes.iter().filter(|n| n.deps.iter().any(|d| d == id)).map(|n| n.id.as_str()).collect();
        if !dependents.is_empty() {
            return Err(BuildError::HasDependents { node: id.into(), dependents: dependents.join(", ") });
        }
        let next = self.nodes.iter().filter(|n| n.id != id).cloned().collect();
        self.commit(next)
    }

    /// Restores the state before the last edit.
    pub fn undo(&mut self) -> bool {
        match self.undo.pop() {
            Some(prev) => {
                self.nodes = prev;
                self.dirty = true;
                true
            }
            None => false,
        }
    }

    /// Full report, schema findings included.
    pub fn report(&self) -> ValidationReport {
        validate_defs(&self.nodes, &self.hooks, self.schema.as_ref())
    }

    pub fn file(&self) -> GraphFile {
        GraphFile { nodes: self.nodes.clone() }
    }

    /// Writes the canonical file and returns the validation report.
    pub fn save(&mut self, path: &Path) -> Result<ValidationReport, BuildError> {
        self.file().save(path)?;
        self.dirty = false;
        Ok(self.report())
    }
}

/// How an interactive session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WizardExit {
    Saved,
    /// Quit without saving, or input ended; the file on disk is untouched.
    Abandoned,
}

const HELP: &str = "commands: add, edit <id>, remove <id>, list, show <id>, undo, validate, save, quit, help";

/// Line-driven front end. Any end of input abandons the session.
pub struct Wizard<R, W> {
    input: R,
    out: W,
}

impl<R: BufRead, W: Write> Wizard<R, W> {
    pub fn new(input: R, out: W) -> Self {
        Wizard { input, out }
    }

    fn ask(&mut self, question: &str) -> io::Result<Option<String>> {
        write!(self.out, "{question}")?;
        self.out.flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line.trim_end_matches(['\n', '\r']).to_string()))
    }

    /// Lines up to a lone `.`.
    fn ask_block(&mut self, question: &str) -> io::Result<Option<String>> {
        writeln!(self.out, "{question}")?;
        let mut lines = Vec::new();
        loop {
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Ok(None);
            }
            let line = line.trim_end_matches(['\n', '\r']);
            if line == "." {
                return Ok(Some(lines.join("\n")));
            }
            lines.push(line.to_string());
        }
    }

    pub fn run(&mut self, session: &mut BuilderSession, path: &Path) -> io::Result<WizardExit> {
        writeln!(self.out, "graph builder: {} ({} nodes)\n{HELP}", path.display(), session.nodes().len())?;
        loop {
            let Some(line) = self.ask("builder> ")? else { return Ok(WizardExit::Abandoned) };
            let (cmd, arg) = match line.trim().split_once(char::is_whitespace) {
                Some((c, a)) => (c.to_string(), a.trim().to_string()),
                None => (line.trim().to_string(), String::new()),
            };
            let done = match cmd.as_str() {
                "" => None,
                "help" | "?" => {
                    writeln!(self.out, "{HELP}")?;
                    None
                }
                "list" | "ls" => {
                    for n in session.nodes() {
                        let deps: Vec<&str> = n.deps.iter().map(NodeId::as_str).collect();
                        let hook = n.after_query.as_ref().map(|h| format!(" after_query={h}")).unwrap_or_default();
                        writeln!(self.out, "  {} <- [{}]{hook}", n.id, deps.join(", "))?;
                    }
                    None
                }
                "show" => {
                    match session.node(&arg) {
                        Some(n) => writeln!(self.out, "{}", serde_json::to_string_pretty(&GraphFile { nodes: vec![n.clone()] }).unwrap_or_default())?,
                        None => writeln!(self.out, "no node `{arg}`")?,
                    }
                    None
                }
                "add" => self.add(session)?,
                "edit" => self.edit(session, &arg)?,
                "remove" | "rm" => {
                    match session.remove_node(&arg) {
                        Ok(()) => writeln!(self.out, "removed `{arg}`")?,
                        Err(e) => writeln!(self.out, "{e}")?,
                    }
                    None
                }
                "undo" => {
                    let msg = if session.undo() { "undone" } else { "nothing to undo" };
                    writeln!(self.out, "{msg}")?;
                    None
                }
                "validate" => {
                    self.print_report(&session.report())?;
                    None
                }
                "save" => match session.save(path) {
                    Ok(report) => {
                        writeln!(self.out, "saved {} nodes to {}", session.nodes().len(), path.display())?;
                        self.print_report(&report)?;
                        None
                    }
                    Err(e) => {
                        writeln!(self.out, "save failed: {e}")?;
                        None
                    }
                },
                "quit" | "exit" | "q" => {
                    if !session.is_dirty() {
                        return Ok(if session.undo.is_empty() { WizardExit::Abandoned } else { WizardExit::Saved });
                    }
                    match self.ask("discard unsaved changes? [y/N] ")? {
                        Some(a) if a.trim().eq_ignore_ascii_case("y") => Some(WizardExit::Abandoned),
                        Some(_) => None,
                        None => Some(WizardExit::Abandoned),
                    }
                }
                other => {
                    writeln!(self.out, "unknown command `{other}`; {HELP}")?;
                    None
                }
            };
            if let Some(exit) = done {
                return Ok(exit);
            }
        }
    }

    fn print_report(&mut self, report: &ValidationReport) -> io::Result<()> {
        if report.is_empty() {
            writeln!(self.out, "validation: no findings")
        } else {
            writeln!(self.out, "validation: {} finding(s)\n{report}", report.len())
        }
    }

    /// Asks until `check` accepts the answer. `Ok(None)` at end of input.
    fn ask_until<T>(
        &mut self,
        question: &str,
        mut check: impl FnMut(&str) -> Result<T, String>,
    ) -> io::Result<Option<T>> {
        loop {
            let Some(answer) = self.ask(question)? else { return Ok(None) };
            match check(answer.trim()) {
                Ok(v) => return Ok(Some(v)),
                Err(msg) => writeln!(self.out, "  {msg}")?,
            }
        }
    }

    /// Asks the per-node questions. `current` supplies values kept on an
    /// empty answer; `-` clears optional fields.
    fn fields(&mut self, session: &BuilderSession, id: &NodeId, current: Option<&NodeDef>) -> io::Result<Option<NodeDef>> {
        let keep = |s: &str| current.is_some() && s.is_empty();
        let prompt_q = match current {
            Some(_) => "prompt (end with a line holding only `.`; a lone `.` keeps the current prompt):",
            None => "prompt (end with a line holding only `.`):",
        };
        let Some(mut prompt) = self.ask_block(prompt_q)? else { return Ok(None) };
        if let (Some(cur), true) = (current, prompt.is_empty()) {
            prompt = cur.prompt.clone();
        }

        let cur_deps = current.map(|c| c.deps.iter().map(NodeId::as_str).collect::<Vec<_>>().join(", ")).unwrap_or_default();
        let known: Vec<String> = session.nodes().iter().map(|n| n.id.to_string()).filter(|n| n != id.as_str()).collect();
        let deps_q = format!("deps, comma-separated [{cur_deps}]: ");
        let Some(deps) = self.ask_until(&deps_q, |s| {
            if keep(s) {
                return Ok(current.map(|c| c.deps.clone()).unwrap_or_default());
            }
            let mut deps: Vec<NodeId> = Vec::new();
            for d in s.split(',').map(str::trim).filter(|d| !d.is_empty() && *d != "-") {
                if d == id.as_str() {
                    return Err(format!("`{d}` cannot depend on itself"));
                }
                if !known.iter().any(|k| k == d) {
                    return Err(format!("unknown node `{d}`; known nodes: {}", known.join(", ")));
                }
                if deps.iter().any(|x| x == d) {
                    return Err(format!("`{d}` listed twice"));
                }
                deps.push(d.into());
            }
            Ok(deps)
        })?
        else {
            return Ok(None);
        };

        let cur_hook = current.and_then(|c| c.after_query.as_ref()).map(|h| h.to_string()).unwrap_or_default();
        let hooks = session.hooks();
        let exists = |n: &str| known.iter().any(|k| k == n) || n == id.as_str();
        let hook_q = format!("after-query hook, e.g. parse_map:subgoals [{cur_hook}]: ");
        let Some(after_query) = self.ask_until(&hook_q, |s| {
            if keep(s) {
                return Ok(current.and_then(|c| c.after_query.clone()));
            }
            if s.is_empty() || s == "-" {
                return Ok(None);
            }
            let h = HookRef::parse(s);
            let hook = hooks.get(&h.id).ok_or_else(|| {
                let ids: Vec<&str> = hooks.ids().collect();
                format!("unknown hook `{}`; registered: {}", h.id, ids.join(", "))
            })?;
            hook.check_arg(h.arg.as_deref(), &exists)?;
            Ok(Some(h))
        })?
        else {
            return Ok(None);
        };

        let cur_compose = current.map_or(DEFAULT_COMPOSE, |c| c.compose.as_str()).to_string();
        let Some(compose) = self.ask_until(&format!("compose [{cur_compose}]: "), |s| match s {
            "" => Ok(cur_compose.clone()),
            "-" => Ok(DEFAULT_COMPOSE.to_string()),
            c if c == DEFAULT_COMPOSE || hooks.has_compose(c) => Ok(c.to_string()),
            c => Err(format!("unknown compose hook `{c}`")),
        })?
        else {
            return Ok(None);
        };

        let cur_model = current.map_or(DEFAULT_MODEL, |c| c.model.as_str()).to_string();
        let Some(model) = self.ask_until(&format!("model profile [{cur_model}]: "), |s| match s {
            "" => Ok(cur_model.clone()),
            "-" => Ok(DEFAULT_MODEL.to_string()),
            m => Ok(m.to_string()),
        })?
        else {
            return Ok(None);
        };

        let mut def = NodeDef::new(id.clone(), prompt).with_deps(deps).with_compose(compose).with_model(model);
        def.after_query = after_query;
        Ok(Some(def))
    }

    fn add(&mut self, session: &mut BuilderSession) -> io::Result<Option<WizardExit>> {
        let Some(id) = self.ask_until("node id: ", |s| {
            if s.is_empty() || s.contains(char::is_whitespace) {
                Err("ids are non-empty and contain no spaces".to_string())
            } else if session.node(s).is_some() {
                Err(format!("node `{s}` already exists"))
            } else {
                Ok(NodeId::from(s))
            }
        })?
        else {
            return Ok(Some(WizardExit::Abandoned));
        };
        let Some(def) = self.fields(session, &id, None)? else { return Ok(Some(WizardExit::Abandoned)) };
        match session.add_node(def) {
            Ok(()) => writeln!(self.out, "added `{id}`")?,
            Err(e) => writeln!(self.out, "{e}")?,
        }
        Ok(None)
    }

    fn edit(&mut self, session: &mut BuilderSession, id: &str) -> io::Result<Option<WizardExit>> {
        let Some(current) = session.node(id).cloned() else {
            writeln!(self.out, "no node `{id}`")?;
            return Ok(None);
        };
        let Some(def) = self.fields(session, &current.id, Some(&current))? else { return Ok(Some(WizardExit::Abandoned)) };
        match session.edit_node(def) {
            Ok(()) => writeln!(self.out, "updated `{id}`")?,
            Err(e) => writeln!(self.out, "{e}")?,
        }
        Ok(None)
    }
}
