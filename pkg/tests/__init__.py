"""Test suite for splatproto"""
