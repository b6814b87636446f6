import csv
import os
import sys
from loguru import logger

LOG_FORMAT = "{time:HH:mm:ss} | {level: <7} | {name}:{line} - {message}"


def setup_logger(verbose = False):
    '''
    Single stderr sink; DEBUG when verbose else INFO
    '''
    logger.remove()
    logger.add(sys.stderr, level = "DEBUG" if verbose else "INFO",
                format = LOG_FORMAT)
    return logger


def LOG2CSV(data, csv_file, flag = 'a', header = None):
    '''
    data: List of elements to be written
    header: written once, only when the file does not exist yet
    '''
    new_file = not os.path.isfile(csv_file) or flag == 'w'
    with open(csv_file, flag, newline = '') as csvFile:
        writer = csv.writer(csvFile, lineterminator = '\n')
        if header and new_file:
            writer.writerow(header)
        writer.writerow(data)


def fmt_float(value, precision = 6):
    ''' Fixed precision text for CSV cells; None becomes blank
    '''
    if value is None:
        return ""
    return "{:.{}f}".format(float(value), precision)


def write_csv_table(path, header, rows):
    ''' Whole-table writer, floats are expected pre-formatted (fmt_float)
    '''
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok = True)
    with open(path, 'w', newline = '') as csvFile:
        writer = csv.writer(csvFile, lineterminator = '\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    logger.debug("wrote {} rows to {}", len(rows), path)
    return path


def read_csv_table(path):
    ''' Returns list of dict rows keyed by header
    '''
    with open(path, 'r', newline = '') as csvFile:
        return list(csv.DictReader(csvFile))
