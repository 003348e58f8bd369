use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use rusqlite::params;

use super::tsv::{self, row, unescape};
use super::{Datastore, InstanceKind, Result, StoreError};

/// Raw dumps of the four tables, one TSV document each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tables {
    pub data: String,
    pub annotations: String,
    pub users: String,
    pub options: String,
}

impl Tables {
    /// Writes `data.tsv`, `annotations.tsv`, `users.tsv` and `options.tsv`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in [
            ("data.tsv", &self.data),
            ("annotations.tsv", &self.annotations),
            ("users.tsv", &self.users),
            ("options.tsv", &self.options),
        ] {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

pub const DATA_DUMP_HEADER: &str = "id\tkind\tcontent\tcontext\tmeta";

/// Column name for the `visit`-th answer at `state`: `s`, `s#2`, `s#3`, ...
pub fn column_name(state: &str, visit: u32) -> String {
    if visit <= 1 {
        state.to_string()
    } else {
        format!("{state}#{visit}")
    }
}

impl Datastore {
    /// One row per committed annotation with a column per (state, visit)
    /// pair seen anywhere in the data.
    ///
    /// Columns follow `state_order`; states missing from it come after, by
    /// name. Absent answers are empty cells.
    pub fn export_annotations(&self, state_order: &[String]) -> Result<String> {
        let records = self.annotations()?;
        let rank = |s: &str| {
            state_order
                .iter()
                .position(|o| o == s)
                .unwrap_or(state_order.len())
        };
        let columns: BTreeSet<(usize, String, u32)> = records
            .iter()
            .flat_map(|r| r.answers.iter())
            .map(|a| (rank(&a.state), a.state.clone(), a.visit))
            .collect();
        let index: BTreeMap<(&str, u32), usize> = columns
            .iter()
            .enumerate()
            .map(|(i, (_, s, v))| ((s.as_str(), *v), i))
            .collect();

        let mut header = vec!["instance_id".to_string(), "user_id".to_string()];
        header.extend(columns.iter().map(|(_, s, v)| column_name(s, *v)));
        let mut out = row(&header);
        for r in &records {
            let mut cells = vec![String::new(); columns.len()];
            for a in &r.answers {
                cells[index[&(a.state.as_str(), a.visit)]] = a.answer.to_cell();
            }
            let mut line = vec![r.instance_id.to_string(), r.user_id.to_string()];
            line.extend(cells);
            out.push_str(&row(&line));
        }
        Ok(out)
    }

    /// Lossless dump of every table. Password hashes are included; plaintext
    /// passwords are never stored.
    pub fn export_tables(&self) -> Result<Tables> {
        let conn = self.conn();

        let mut data = row(&["id", "kind", "content", "context", "meta"]);
        let mut stmt =
            conn.prepare("SELECT id, kind, content, context, meta FROM data ORDER BY id")?;
        let rows = stmt.query_map([], |r| {
            Ok([
                r.get::<_, i64>(0)?.to_string(),
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, Option<String>>(3)?.unwrap_or_default(),
                r.get::<_, String>(4)?,
            ])
        })?;
        for r in rows {
            data.push_str(&row(&r?));
        }

        let mut annotations = row(&["instance_id", "user_id", "answers", "committed_at"]);
        let mut stmt = conn.prepare(
            "SELECT instance_id, user_id, answers, committed_at FROM annotations
             ORDER BY instance_id, user_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok([
                r.get::<_, i64>(0)?.to_string(),
                r.get::<_, i64>(1)?.to_string(),
                r.get::<_, String>(2)?,
                r.get::<_, i64>(3)?.to_string(),
            ])
        })?;
        for r in rows {
            annotations.push_str(&row(&r?));
        }

        let mut users = row(&[
            "id",
            "username",
            "email",
            "full_name",
            "password_hash",
            "role",
            "active",
        ]);
        let mut stmt = conn.prepare(
            "SELECT id, username, email, full_name, password_hash, role, active FROM users
             ORDER BY id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok([
                r.get::<_, i64>(0)?.to_string(),
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, String>(5)?,
                r.get::<_, bool>(6)?.to_string(),
            ])
        })?;
        for r in rows {
            users.push_str(&row(&r?));
        }

        drop(stmt);
        let opts = super::read_options(&conn)?;
        let mut options = row(&["annotators_per_instance", "assignment_lease_minutes"]);
        options.push_str(&row(&[
            opts.annotators_per_instance.to_string(),
            opts.assignment_lease_minutes.to_string(),
        ]));

        Ok(Tables {
            data,
            annotations,
            users,
            options,
        })
    }

    /// Restores rows from a `data.tsv` dump, keeping their ids. The whole
    /// dump is applied or nothing is.
    pub fn import_data_dump(&self, input: impl BufRead) -> Result<usize> {
        let mut lines = input.lines();
        match lines.next().transpose()? {
            Some(h) if h == DATA_DUMP_HEADER => {}
            other => {
                return Err(StoreError::BadInput(format!(
                    "data dump header must be `{}`, found {:?}",
                    DATA_DUMP_HEADER.escape_debug(),
                    other.unwrap_or_default()
                )))
            }
        }
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let mut n = 0;
        for (i, line) in lines.enumerate() {
            let line = line?;
            let cells: Vec<String> = line.split('\t').map(unescape).collect();
            let bad = |m: &str| StoreError::BadInput(format!("line {}: {m}", i + 2));
            let [id, kind, content, context, meta] = cells.as_slice() else {
                return Err(bad("expected 5 columns"));
            };
            let id: i64 = id.parse().map_err(|_| bad("id is not an integer"))?;
            let kind = InstanceKind::parse(kind).map_err(|_| bad("unknown kind"))?;
            if kind == InstanceKind::File && tsv::page_list(content).is_none() {
                return Err(bad("file content is not a list of pages"));
            }
            let context = (!context.is_empty()).then_some(context);
            tx.execute(
                "INSERT INTO data (id, kind, content, context, meta) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![id, kind.as_str(), content, context, meta],
            )?;
            n += 1;
        }
        tx.commit()?;
        Ok(n)
    }
}
