//! Deterministic SQL analysis on top of the parsed AST.
//!
//! The centerpiece is [`referenced_pairs`]: a scope-aware walk that extracts
//! the exact set of (table, column) pairs a query touches, resolving column
//! references through aliases, qualified names, FROM/JOIN scopes, and
//! subqueries. Unqualified columns resolve to the unique in-scope table
//! owning that column; `*` (including `count(*)`) expands to all columns of
//! the in-scope tables. Derived tables and CTEs are opaque: references to
//! their projected names contribute nothing, while their bodies are walked
//! normally.

use std::collections::HashSet;

use sqlparser::ast::{
    Cte, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr, Join, JoinConstraint,
    JoinOperator, ObjectName, ObjectNamePart, OrderByKind, Query, Select, SelectItem,
    SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor, Value,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::{Token, Tokenizer};

use crate::schema::{DbSchema, SchemaSubset};
use crate::{Error, Result};

/// Parse a SQL string into statements (SQLite dialect).
pub fn parse_sql(sql: &str) -> Result<Vec<Statement>> {
    Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| Error::invalid(format!("sql parse: {e}")))
}

/// Whether the string parses as at least one statement.
pub fn parses(sql: &str) -> bool {
    matches!(parse_sql(sql), Ok(stmts) if !stmts.is_empty())
}

/// Extract the (table, column) pairs referenced by a query. Errors when the
/// SQL does not parse; callers fall back to the LLM inference path then.
pub fn referenced_pairs(sql: &str, schema: &DbSchema) -> Result<SchemaSubset> {
    let statements = parse_sql(sql)?;
    if statements.is_empty() {
        return Err(Error::invalid("empty sql"));
    }
    let mut walker = Walker { schema, pairs: SchemaSubset::new() };
    for stmt in &statements {
        if let Statement::Query(q) = stmt {
            walker.walk_query(q, &[]);
        }
    }
    Ok(walker.pairs)
}

/// One name visible in a FROM scope. `table_idx` is None for derived tables,
/// CTEs, and names not present in the schema; those are opaque.
#[derive(Debug, Clone)]
struct ScopeEntry {
    alias: String,
    table_idx: Option<usize>,
}

#[derive(Debug, Clone, Default)]
struct Scope {
    entries: Vec<ScopeEntry>,
    ctes: HashSet<String>,
}

struct Walker<'a> {
    schema: &'a DbSchema,
    pairs: SchemaSubset,
}

impl<'a> Walker<'a> {
    fn table_idx(&self, name: &str) -> Option<usize> {
        self.schema.tables.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    fn add_pair(&mut self, table_idx: usize, column: &str) {
        let table = &self.schema.tables[table_idx];
        if let Some(col) = table.column(column) {
            let (t, c) = (table.name.clone(), col.name.clone());
            self.pairs.insert(&t, &c);
        }
    }

    fn add_all_columns(&mut self, table_idx: usize) {
        let table = &self.schema.tables[table_idx];
        let cols: Vec<(String, String)> =
            table.columns.iter().map(|c| (table.name.clone(), c.name.clone())).collect();
        for (t, c) in cols {
            self.pairs.insert(&t, &c);
        }
    }

    /// Walk a query and return the scope its body established (used to
    /// resolve a trailing ORDER BY).
    fn walk_query(&mut self, q: &Query, chain: &[Scope]) -> Scope {
        let mut cte_scope = Scope::default();
        if let Some(with) = &q.with {
            for cte in &with.cte_tables {
                self.walk_cte(cte, &cte_scope, chain);
                cte_scope.ctes.insert(cte.alias.name.value.to_lowercase());
            }
        }
        let mut inner_chain: Vec<Scope> = Vec::with_capacity(chain.len() + 1);
        inner_chain.push(cte_scope);
        inner_chain.extend_from_slice(chain);

        let body_scope = self.walk_setexpr(&q.body, &inner_chain);

        if let Some(order_by) = &q.order_by {
            if let OrderByKind::Expressions(exprs) = &order_by.kind {
                let mut full = Vec::with_capacity(inner_chain.len() + 1);
                full.push(body_scope.clone());
                full.extend_from_slice(&inner_chain);
                for oe in exprs {
                    self.walk_expr(&oe.expr, &full);
                }
            }
        }
        body_scope
    }

    fn walk_cte(&mut self, cte: &Cte, earlier_ctes: &Scope, chain: &[Scope]) {
        let mut sub_chain: Vec<Scope> = Vec::with_capacity(chain.len() + 1);
        sub_chain.push(earlier_ctes.clone());
        sub_chain.extend_from_slice(chain);
        self.walk_query(&cte.query, &sub_chain);
    }

    fn walk_setexpr(&mut self, body: &SetExpr, chain: &[Scope]) -> Scope {
        match body {
            SetExpr::Select(sel) => self.walk_select(sel, chain),
            SetExpr::Query(q) => self.walk_query(q, chain),
            SetExpr::SetOperation { left, right, .. } => {
                let scope = self.walk_setexpr(left, chain);
                self.walk_setexpr(right, chain);
                scope
            }
            SetExpr::Values(values) => {
                for row in &values.rows {
                    for expr in &row.content {
                        self.walk_expr(expr, chain);
                    }
                }
                Scope::default()
            }
            _ => Scope::default(),
        }
    }

    fn walk_select(&mut self, sel: &Select, outer_chain: &[Scope]) -> Scope {
        let mut scope = Scope::default();
        for twj in &sel.from {
            self.scope_table_factor(&twj.relation, &mut scope, outer_chain);
            for join in &twj.joins {
                self.scope_table_factor(&join.relation, &mut scope, outer_chain);
            }
        }

        let mut chain: Vec<Scope> = Vec::with_capacity(outer_chain.len() + 1);
        chain.push(scope.clone());
        chain.extend_from_slice(outer_chain);

        for twj in &sel.from {
            for join in &twj.joins {
                self.walk_join_constraint(join, &chain);
            }
        }
        for item in &sel.projection {
            match item {
                SelectItem::UnnamedExpr(e) => self.walk_expr(e, &chain),
                SelectItem::ExprWithAlias { expr, .. } => self.walk_expr(expr, &chain),
                SelectItem::ExprWithAliases { expr, .. } => self.walk_expr(expr, &chain),
                SelectItem::Wildcard(_) => self.expand_wildcard(&chain),
                SelectItem::QualifiedWildcard(kind, _) => {
                    if let SelectItemQualifiedWildcardKind::ObjectName(name) = kind {
                        self.expand_qualified_wildcard(name, &chain);
                    }
                }
            }
        }
        if let Some(sel_expr) = &sel.selection {
            self.walk_expr(sel_expr, &chain);
        }
        if let GroupByExpr::Expressions(exprs, _) = &sel.group_by {
            for e in exprs {
                self.walk_expr(e, &chain);
            }
        }
        if let Some(having) = &sel.having {
            self.walk_expr(having, &chain);
        }
        if let Some(qualify) = &sel.qualify {
            self.walk_expr(qualify, &chain);
        }
        scope
    }

    fn scope_table_factor(&mut self, factor: &TableFactor, scope: &mut Scope, outer_chain: &[Scope]) {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                let raw = object_name_tail(name);
                let lower = raw.to_lowercase();
                let is_cte = outer_chain.iter().any(|s| s.ctes.contains(&lower));
                let table_idx = if is_cte { None } else { self.table_idx(&raw) };
                let alias_name = alias.as_ref().map(|a| a.name.value.to_lowercase()).unwrap_or(lower);
                scope.entries.push(ScopeEntry { alias: alias_name, table_idx });
            }
            TableFactor::Derived { subquery, alias, .. } => {
                self.walk_query(subquery, outer_chain);
                let alias_name = alias.as_ref().map(|a| a.name.value.to_lowercase()).unwrap_or_default();
                scope.entries.push(ScopeEntry { alias: alias_name, table_idx: None });
            }
            TableFactor::NestedJoin { table_with_joins, .. } => {
                self.scope_table_factor(&table_with_joins.relation, scope, outer_chain);
                for join in &table_with_joins.joins {
                    self.scope_table_factor(&join.relation, scope, outer_chain);
                }
            }
            _ => {}
        }
    }

    fn walk_join_constraint(&mut self, join: &Join, chain: &[Scope]) {
        let constraint = match &join.join_operator {
            JoinOperator::Join(c)
            | JoinOperator::Inner(c)
            | JoinOperator::Left(c)
            | JoinOperator::LeftOuter(c)
            | JoinOperator::Right(c)
            | JoinOperator::RightOuter(c)
            | JoinOperator::FullOuter(c)
            | JoinOperator::Semi(c)
            | JoinOperator::LeftSemi(c)
            | JoinOperator::RightSemi(c)
            | JoinOperator::Anti(c)
            | JoinOperator::LeftAnti(c)
            | JoinOperator::RightAnti(c) => Some(c),
            _ => None,
        };
        match constraint {
            Some(JoinConstraint::On(expr)) => self.walk_expr(expr, chain),
            Some(JoinConstraint::Using(cols)) => {
                // USING(c) references c in every table that carries it.
                for name in cols {
                    let col = object_name_tail(name);
                    if let Some(scope) = chain.first() {
                        let owners: Vec<usize> = scope
                            .entries
                            .iter()
                            .filter_map(|e| e.table_idx)
                            .filter(|idx| self.schema.tables[*idx].has_column(&col))
                            .collect();
                        for idx in owners {
                            self.add_pair(idx, &col);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    fn expand_wildcard(&mut self, chain: &[Scope]) {
        if let Some(scope) = chain.first() {
            let idxs: Vec<usize> = scope.entries.iter().filter_map(|e| e.table_idx).collect();
            for idx in idxs {
                self.add_all_columns(idx);
            }
        }
    }

    fn expand_qualified_wildcard(&mut self, name: &ObjectName, chain: &[Scope]) {
        let qual = object_name_tail(name).to_lowercase();
        for scope in chain {
            if let Some(entry) = scope.entries.iter().find(|e| e.alias == qual) {
                if let Some(idx) = entry.table_idx {
                    self.add_all_columns(idx);
                }
                return;
            }
        }
        if let Some(idx) = self.table_idx(&qual) {
            self.add_all_columns(idx);
        }
    }

    fn resolve_qualified(&mut self, qual: &str, column: &str, chain: &[Scope]) {
        let q = qual.to_lowercase();
        for scope in chain {
            if let Some(entry) = scope.entries.iter().find(|e| e.alias == q) {
                if let Some(idx) = entry.table_idx {
                    self.add_pair(idx, column);
                }
                return;
            }
        }
        // Not an in-scope alias; accept a direct schema table reference.
        if let Some(idx) = self.table_idx(qual) {
            self.add_pair(idx, column);
        }
    }

    fn resolve_unqualified(&mut self, column: &str, chain: &[Scope]) {
        for scope in chain {
            let mut owners: Vec<usize> = scope
                .entries
                .iter()
                .filter_map(|e| e.table_idx)
                .filter(|idx| self.schema.tables[*idx].has_column(column))
                .collect();
            owners.dedup();
            match owners.len() {
                1 => {
                    self.add_pair(owners[0], column);
                    return;
                }
                0 => {
                    // A derived table in this scope may own the name; stop
                    // rather than mis-attributing it to an outer table.
                    if scope.entries.iter().any(|e| e.table_idx.is_none()) {
                        return;
                    }
                }
                _ => return, // ambiguous
            }
        }
    }

    fn walk_expr(&mut self, expr: &Expr, chain: &[Scope]) {
        match expr {
            Expr::Identifier(ident) => self.resolve_unqualified(&ident.value, chain),
            Expr::CompoundIdentifier(parts) => {
                if parts.len() >= 2 {
                    let qual = &parts[parts.len() - 2].value;
                    let col = &parts[parts.len() - 1].value;
                    self.resolve_qualified(qual, col, chain);
                }
            }
            Expr::Wildcard(_) => self.expand_wildcard(chain),
            Expr::QualifiedWildcard(name, _) => self.expand_qualified_wildcard(name, chain),
            Expr::IsFalse(e)
            | Expr::IsNotFalse(e)
            | Expr::IsTrue(e)
            | Expr::IsNotTrue(e)
            | Expr::IsNull(e)
            | Expr::IsNotNull(e)
            | Expr::IsUnknown(e)
            | Expr::IsNotUnknown(e)
            | Expr::Nested(e)
            | Expr::Collate { expr: e, .. } => self.walk_expr(e, chain),
            Expr::IsDistinctFrom(a, b) | Expr::IsNotDistinctFrom(a, b) => {
                self.walk_expr(a, chain);
                self.walk_expr(b, chain);
            }
            Expr::InList { expr, list, .. } => {
                self.walk_expr(expr, chain);
                for e in list {
                    self.walk_expr(e, chain);
                }
            }
            Expr::InSubquery { expr, subquery, .. } => {
                self.walk_expr(expr, chain);
                self.walk_query(subquery, chain);
            }
            Expr::Between { expr, low, high, .. } => {
                self.walk_expr(expr, chain);
                self.walk_expr(low, chain);
                self.walk_expr(high, chain);
            }
            Expr::BinaryOp { left, right, .. } => {
                self.walk_expr(left, chain);
                self.walk_expr(right, chain);
            }
            Expr::Like { expr, pattern, .. }
            | Expr::ILike { expr, pattern, .. }
            | Expr::SimilarTo { expr, pattern, .. } => {
                self.walk_expr(expr, chain);
                self.walk_expr(pattern, chain);
            }
            Expr::AnyOp { left, right, .. } | Expr::AllOp { left, right, .. } => {
                self.walk_expr(left, chain);
                self.walk_expr(right, chain);
            }
            Expr::UnaryOp { expr, .. } => self.walk_expr(expr, chain),
            Expr::Cast { expr, .. } => self.walk_expr(expr, chain),
            Expr::Extract { expr, .. } => self.walk_expr(expr, chain),
            Expr::Position { expr, r#in } => {
                self.walk_expr(expr, chain);
                self.walk_expr(r#in, chain);
            }
            Expr::Substring { expr, substring_from, substring_for, .. } => {
                self.walk_expr(expr, chain);
                if let Some(e) = substring_from {
                    self.walk_expr(e, chain);
                }
                if let Some(e) = substring_for {
                    self.walk_expr(e, chain);
                }
            }
            Expr::Trim { expr, trim_what, .. } => {
                self.walk_expr(expr, chain);
                if let Some(e) = trim_what {
                    self.walk_expr(e, chain);
                }
            }
            Expr::Function(func) => self.walk_function(func, chain),
            Expr::Case { operand, conditions, else_result, .. } => {
                if let Some(op) = operand {
                    self.walk_expr(op, chain);
                }
                for when in conditions {
                    self.walk_expr(&when.condition, chain);
                    self.walk_expr(&when.result, chain);
                }
                if let Some(e) = else_result {
                    self.walk_expr(e, chain);
                }
            }
            Expr::Exists { subquery, .. } | Expr::Subquery(subquery) => {
                self.walk_query(subquery, chain);
            }
            Expr::Tuple(exprs) => {
                for e in exprs {
                    self.walk_expr(e, chain);
                }
            }
            Expr::GroupingSets(sets) | Expr::Cube(sets) | Expr::Rollup(sets) => {
                for set in sets {
                    for e in set {
                        self.walk_expr(e, chain);
                    }
                }
            }
            // Literals and exotic dialect forms carry no schema references
            // we track.
            _ => {}
        }
    }

    fn walk_function(&mut self, func: &sqlparser::ast::Function, chain: &[Scope]) {
        self.walk_function_arguments(&func.args, chain);
        if let Some(filter) = &func.filter {
            self.walk_expr(filter, chain);
        }
        if let Some(sqlparser::ast::WindowType::WindowSpec(spec)) = &func.over {
            for e in &spec.partition_by {
                self.walk_expr(e, chain);
            }
            for oe in &spec.order_by {
                self.walk_expr(&oe.expr, chain);
            }
        }
    }

    fn walk_function_arguments(&mut self, args: &FunctionArguments, chain: &[Scope]) {
        match args {
            FunctionArguments::List(list) => {
                for arg in &list.args {
                    let arg_expr = match arg {
                        FunctionArg::Named { arg, .. } => arg,
                        FunctionArg::ExprNamed { arg, .. } => arg,
                        FunctionArg::Unnamed(a) => a,
                    };
                    match arg_expr {
                        FunctionArgExpr::Expr(e) => self.walk_expr(e, chain),
                        FunctionArgExpr::Wildcard | FunctionArgExpr::WildcardWithOptions(_) => {
                            self.expand_wildcard(chain)
                        }
                        FunctionArgExpr::QualifiedWildcard(name) => {
                            self.expand_qualified_wildcard(name, chain)
                        }
                    }
                }
            }
            FunctionArguments::Subquery(q) => {
                self.walk_query(q, chain);
            }
            FunctionArguments::None => {}
        }
    }
}

fn object_name_tail(name: &ObjectName) -> String {
    name.0
        .last()
        .map(|part| match part {
            ObjectNamePart::Identifier(ident) => ident.value.clone(),
            other => other.to_string(),
        })
        .unwrap_or_default()
}

/// Every string literal in the SQL, in order. Tokenizes when possible and
/// falls back to a manual quoted-token scan when tokenization fails.
pub fn string_literals(sql: &str) -> Vec<String> {
    match Tokenizer::new(&SQLiteDialect {}, sql).tokenize() {
        Ok(tokens) => tokens
            .into_iter()
            .filter_map(|t| match t {
                Token::SingleQuotedString(s) => Some(s),
                _ => None,
            })
            .collect(),
        Err(_) => quoted_token_scan(sql),
    }
}

fn quoted_token_scan(sql: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<char> = sql.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '\'' {
            let mut lit = String::new();
            i += 1;
            while i < chars.len() {
                if chars[i] == '\'' {
                    if i + 1 < chars.len() && chars[i + 1] == '\'' {
                        lit.push('\'');
                        i += 2;
                        continue;
                    }
                    break;
                }
                lit.push(chars[i]);
                i += 1;
            }
            out.push(lit);
        }
        i += 1;
    }
    out
}

/// True when the top-level query carries an ORDER BY (subquery ordering does
/// not count). Falls back to a paren-depth text scan when parsing fails.
pub fn has_top_level_order_by(sql: &str) -> bool {
    if let Ok(statements) = parse_sql(sql) {
        for stmt in &statements {
            if let Statement::Query(q) = stmt {
                if let Some(ob) = &q.order_by {
                    match &ob.kind {
                        OrderByKind::Expressions(exprs) => {
                            if !exprs.is_empty() {
                                return true;
                            }
                        }
                        _ => return true,
                    }
                }
            }
        }
        return false;
    }
    order_by_text_scan(sql)
}

fn order_by_text_scan(sql: &str) -> bool {
    let chars: Vec<char> = sql.chars().collect();
    let lower: Vec<char> = sql.to_lowercase().chars().collect();
    let mut depth = 0usize;
    let mut i = 0;
    let mut in_str = false;
    while i < chars.len() {
        let c = chars[i];
        if in_str {
            if c == '\'' {
                in_str = false;
            }
        } else {
            match c {
                '\'' => in_str = true,
                '(' => depth += 1,
                ')' => depth = depth.saturating_sub(1),
                _ => {
                    if depth == 0
                        && lower[i..].starts_with(&['o', 'r', 'd', 'e', 'r'])
                        && (i == 0 || !lower[i - 1].is_alphanumeric())
                    {
                        let rest: String = lower[i + 5..].iter().collect();
                        let trimmed = rest.trim_start();
                        if trimmed.starts_with("by") {
                            return true;
                        }
                    }
                }
            }
        }
        i += 1;
    }
    false
}

/// Strip trailing whitespace and semicolons.
pub fn strip_trailing_semicolons(sql: &str) -> &str {
    sql.trim_end().trim_end_matches(';').trim_end()
}

/// Remove duplicate projection columns from the top-level SELECT. Returns
/// None when the SQL does not parse or nothing changed; otherwise the
/// rewritten statement.
pub fn dedupe_projection(sql: &str) -> Option<String> {
    let mut statements = parse_sql(sql).ok()?;
    if statements.len() != 1 {
        return None;
    }
    let stmt = statements.pop()?;
    if let Statement::Query(mut q) = stmt {
        if let SetExpr::Select(sel) = q.body.as_mut() {
            let before = sel.projection.len();
            let mut seen = HashSet::new();
            sel.projection.retain(|item| seen.insert(item.to_string().to_lowercase()));
            if sel.projection.len() < before && !sel.projection.is_empty() {
                return Some(Statement::Query(q).to_string());
            }
        }
    }
    None
}

/// Whether a literal value node appears anywhere is irrelevant to schema
/// linking, but the numeric-zero probe is needed by the checker's
/// suspicious-result rules when they look at scalar outputs.
pub fn is_number_literal(value: &Value) -> bool {
    matches!(value, Value::Number(..))
}
